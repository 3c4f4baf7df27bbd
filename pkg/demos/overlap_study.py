"""
Small overlap between guests
============================

With only x% of entities held by both guests, classical training can use
just that x%. Entity augmentation also trains on the rest, pairing each
guest's private entities. This runs both on the MNIST half-image task.
Needs the MNIST data (installed automatically with the ``data`` extra).
"""

from entityaug.harness import builtin_config, comparison_table, sweep

base = builtin_config("mnist-mlp").with_(epochs=20)
configs = []
for x in (5.0, 10.0):
    configs.append(base.with_(mode="aligned", x_percent=x))
    configs.append(base.with_(mode="mixed", x_percent=x))

rows = sweep(configs, seeds=[0])
print(comparison_table(rows))

import numpy as np
import pytest

from entityaug.data import EntityRegistry, FeatureTable, LabelStore, PartitionSpec, vertical_split
from entityaug.nn import Activation, MlpSpec
from entityaug.protocol import init_state

I, R, L = Activation.IDENTITY, Activation.RELU, Activation.LEAKY_RELU


def toy_problem(n=24, widths=(3, 2), classes=3, seed=0):
    """Random features split across guests plus random one-hot labels."""
    rng = np.random.default_rng(seed)
    ids = np.arange(100, 100 + n)
    values = rng.normal(size=(n, sum(widths)))
    table = FeatureTable(ids, values, tuple(f"f{i}" for i in range(sum(widths))))
    parts = vertical_split(table, PartitionSpec.from_widths(widths))
    reg = EntityRegistry("host", tuple(int(i) for i in ids))
    labels = LabelStore(reg, np.eye(classes)[rng.integers(0, classes, n)], tuple(range(classes)))
    return parts, labels


def toy_state(seed=0, lr=0.01, guest_out=(2, 2), classes=3, n=24, widths=(3, 2)):
    parts, labels = toy_problem(n, widths, classes)
    guest_specs = [MlpSpec([w, 4, o], [L, R]) for w, o in zip(widths, guest_out)]
    host_spec = MlpSpec([sum(guest_out), 5, classes], [L, I])
    return init_state(guest_specs, host_spec, parts, labels, lr, seed)


@pytest.fixture
def state():
    return toy_state()


def write_tiny_dataset(directory, n=60, classes=3, seed=0):
    """Small separable CSV dataset with a two-guest manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    x = rng.normal(scale=0.3, size=(n, 4)) + y[:, None]
    lines = ["id,a,b,c,d,label"]
    lines += [f"{i},{','.join(repr(float(v)) for v in row)},{int(c)}" for i, (row, c) in enumerate(zip(x, y))]
    (directory / "tiny.csv").write_text("\n".join(lines) + "\n")
    manifest = directory / "tiny.toml"
    manifest.write_text(
        'name = "tiny"\nformat = "csv"\npath = "tiny.csv"\nid_column = "id"\nlabel_column = "label"\n'
        'partition = "even"\nnum_guests = 2\n'
    )
    return manifest


@pytest.fixture
def tiny_manifest(tmp_path):
    return write_tiny_dataset(tmp_path)


def tiny_config(manifest, **changes):
    from entityaug.harness import ExperimentConfig

    base = ExperimentConfig(
        name="tiny", dataset=str(manifest), num_guests=2,
        guest_layers=(4, 3), guest_activations=("identity", "relu"),
        host_layers=(5, 3), host_activations=("leaky_relu", "identity"),
        lr=0.01, epochs=3, batch_size=8,
    )
    return base.with_(**changes)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from ctcbench.manifest import CellRecord, Label, Manifest, Provenance
from ctcbench.synthgen import SynthSpec, generate_dataset


def make_record(cell_id, label, provenance, bf="bf.png", dapi="dapi.png"):
    """In-memory record; paths are not resolved unless a test loads images."""
    from pathlib import Path

    return CellRecord(
        cell_id=cell_id,
        label=label,
        provenance=provenance,
        bf_path=Path(bf),
        dapi_path=Path(dapi) if dapi else None,
        source_tag="test",
    )


def make_manifest(n_spiked, n_patient, n_leuko, with_dapi=True):
    """Synthetic in-memory manifest (no files) for split logic tests."""
    records = []
    for i in range(n_spiked):
        records.append(make_record(f"s{i:04d}", Label.CTC, Provenance.SPIKED,
                                   dapi="d.png" if with_dapi else None))
    for i in range(n_patient):
        records.append(make_record(f"p{i:04d}", Label.CTC, Provenance.PATIENT,
                                   dapi="d.png" if with_dapi else None))
    for i in range(n_leuko):
        records.append(make_record(f"l{i:04d}", Label.LEUKO, Provenance.HEALTHY,
                                   dapi="d.png" if with_dapi else None))
    from pathlib import Path

    return Manifest(records=tuple(records), image_root=Path("."))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small rendered dataset shared by tests that need real image files."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    spec = SynthSpec(
        n_spiked_ctc=6,
        n_patient_ctc=3,
        n_leuko=6,
        image_size=32,
        bf_signal_strength=1.0,
        dapi_informativeness=1.0,
        noise_sigma=0.0,
        seed=123,
    )
    return generate_dataset(spec, out)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260808)

import json

import numpy as np
import pytest

from cardlearn.bundle import ModelBundle, ModelConfig
from cardlearn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from cardlearn.composer import Estimator
from cardlearn.encoding import fit_normalizers
from cardlearn.experiments import two_table_gen, two_table_schema
from cardlearn.oracle import toy_schema, generate_dataset
from cardlearn.schema import all_join_templates
from cardlearn.trainer import TrainConfig, fit
from cardlearn.workload import WorkloadSpec, generate_workload


@pytest.fixture(scope="module")
def trained():
    s = two_table_schema(rows=200, key_domain=8)
    ds = generate_dataset(s, two_table_gen(), seed=0)
    wl = generate_workload(ds, WorkloadSpec(tuple(all_join_templates(s, include_single=True)), 30), seed=0)
    b = ModelBundle.build(s, fit_normalizers(s, wl), ModelConfig(n_lcs=8, n_h=16, hidden=(8, 8)))
    fit(b, wl, TrainConfig(batch_size=16, max_epochs=2))
    return s, b, wl


def test_round_trip_is_bit_exact(trained, tmp_path):
    s, b, wl = trained
    p = tmp_path / "m.json"
    save_checkpoint(b, p, {"lr": 1e-3})
    b2 = load_checkpoint(p, s)
    for (k, v), (k2, v2) in zip(b.named_parameters().items(), b2.named_parameters().items()):
        assert k == k2
        np.testing.assert_array_equal(v.data, v2.data)
    qs = [lq.query for lq in wl]
    e1, n1 = Estimator(s, b).estimate_many(qs)
    e2, n2 = Estimator(s, b2).estimate_many(qs)
    assert e1.tobytes() == e2.tobytes()
    assert (n1 == n2).all()
    save_checkpoint(b2, tmp_path / "m2.json", {"lr": 1e-3})
    assert p.read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_load_errors(trained, tmp_path):
    s, b, _ = trained
    p = tmp_path / "m.json"
    save_checkpoint(b, p)
    with pytest.raises(CheckpointError, match="schema_fingerprint"):
        load_checkpoint(p, toy_schema())
    data = json.loads(p.read_text())
    data["version"] = 99
    p.write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p, s)
    data["version"] = 1
    del data["tables"]["R"]["cardest"]["params"]
    p.write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="m.json"):
        load_checkpoint(p, s)
    p.write_text('{"format":\n')
    with pytest.raises(CheckpointError, match=r"m\.json:2"):
        load_checkpoint(p, s)

"""Smoke tests of the python extension module."""

import json
import os
import subprocess
import sys

import pytest

import cate


@pytest.fixture(scope="module")
def spec():
    return cate.SpaceSpec.nasbench101_like()


def test_random_cells_validate(spec):
    for seed in range(20):
        cell = cate.random_cell(spec, seed)
        assert cate.is_valid_cell(cell, spec)
        assert 3 <= cell.num_nodes <= 7
        assert cell.edge_count() <= 9


def test_make_cell_and_hash_invariance(spec):
    vocab = spec.vocab
    diamond = cate.make_cell(
        vocab,
        ["input", "conv1x1", "conv3x3", "output"],
        [(0, 1), (0, 2), (1, 3), (2, 3)],
    )
    swapped = cate.make_cell(
        vocab,
        ["input", "conv3x3", "conv1x1", "output"],
        [(0, 1), (0, 2), (1, 3), (2, 3)],
    )
    assert cate.canonical_hash(diamond) == cate.canonical_hash(swapped)
    assert cate.compute_attribute(diamond, vocab, "params") == 10.0  # conv1x1 + conv3x3, fan-in 1 each


def test_floyd_closure_chain():
    closure = cate.floyd_closure([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
    assert closure[0] == [0, 1, 1]
    assert closure[1] == [0, 0, 1]


def test_attention_masks(spec):
    chain = cate.make_cell(spec.vocab, ["input", "conv1x1", "output"], [(0, 1), (1, 2)])
    indirect = cate.attention_mask(chain, "indirect")
    direct = cate.attention_mask(chain, "direct")
    assert indirect[2] == [1, 1, 1]
    assert direct[2] == [0, 1, 1]
    assert indirect[0] == [1, 0, 0]


def test_encoder_widths_and_permutation_invariance(spec):
    config = cate.EncoderConfig.desk_scale(spec.vocab.size(), 7)
    config.blocks = 2
    config.cross_blocks = 2
    weights = cate.EncoderWeights(config, spec.vocab, 7)
    assert weights.parameter_count() > 0
    cells = [cate.random_cell(spec, s) for s in range(5)]
    encodings = cate.encode_cells(weights, cells, spec)
    assert len(encodings) == 5
    assert all(len(e) == config.hidden for e in encodings)


def test_baseline_encoding_widths(spec):
    cell = cate.random_cell(spec, 3)
    assert len(cate.encode_adjacency_onehot(cell, spec)) == 56
    assert len(cate.encode_path(cell, spec)) == 364
    assert len(cate.encode_path(cell, spec, truncate_to=40)) == 40


def test_darts_transformation():
    edges = [[(0, 2), (1, 2)] for _ in range(4)]
    cell = cate.transform_darts_cell(edges)
    assert cell.num_nodes == 15
    darts_spec = cate.SpaceSpec.darts_transformed()
    assert cate.is_valid_cell(cell, darts_spec)


def test_corruption_and_pairs(spec):
    cell = cate.random_cell(spec, 11)
    ops, positions, originals = cate.corrupt_cell(cell, spec.vocab, rate=0.2, seed=5)
    assert len(positions) >= 1
    assert len(positions) == len(originals)
    for pos, original in zip(positions, originals):
        assert 0 < pos < cell.num_nodes - 1
        assert original == cell.ops[pos]

    pairs = cate.sample_pairs([1.0, 2.0, 3.0, 10.0], 2.0, 1, 7)
    assert all(abs([1.0, 2.0, 3.0, 10.0][x] - [1.0, 2.0, 3.0, 10.0][y]) < 2.0 for x, y in pairs)


def test_synthetic_oracle_and_searches(spec):
    oracle = cate.BenchmarkOracle.synthetic(spec, 42)
    cell = cate.random_cell(spec, 0)
    acc1, counted1 = oracle.query(cell)
    acc2, counted2 = oracle.query(cell)
    assert counted1 and not counted2
    assert acc1 == acc2
    assert oracle.query_count() == 1

    oracle = cate.BenchmarkOracle.synthetic(spec, 42)
    traj = cate.random_search(oracle, spec, 25, 1)
    assert len(traj) == 25
    curve = traj.best_curve()
    assert all(curve[i] <= curve[i + 1] for i in range(len(curve) - 1))

    oracle = cate.BenchmarkOracle.synthetic(spec, 42)
    traj = cate.regularized_evolution(oracle, spec, 30, population=10, tournament=3, seed=2)
    assert len(traj) == 30

    oracle = cate.BenchmarkOracle.synthetic(spec, 42)
    traj = cate.local_search(oracle, spec, 25, 3)
    assert len(traj) == 25


def test_cate_dngo_ls_growth(spec):
    cells = [cate.random_cell(spec, s) for s in range(300)]
    seen = set()
    distinct = []
    for cell in cells:
        h = cate.canonical_hash(cell)
        if h not in seen:
            seen.add(h)
            distinct.append(cell)
    encodings = [cate.encode_adjacency_onehot(c, spec) for c in distinct]
    universe = cate.CandidateUniverse(distinct, encodings)
    oracle = cate.BenchmarkOracle.synthetic(spec, 9)
    traj = cate.cate_dngo_ls(oracle, universe, 50, seed=4, predictor_epochs=20)
    assert len(traj) == 50


def test_run_command_pipeline(tmp_path):
    config = {
        "space": {
            "ops": [
                {"label": "maxpool3x3", "param_cost": 0.0, "flops_cost": 1.0},
                {"label": "conv1x1", "param_cost": 1.0, "flops_cost": 2.0},
                {"label": "conv3x3", "param_cost": 9.0, "flops_cost": 18.0},
            ],
            "max_nodes": 7,
            "max_edges": 9,
        },
        "gen": {"count": 100, "seed": 2},
        "benchmark": {"kind": "synthetic", "seed": 5},
        "search": {"algorithms": ["random"], "budget": 20, "seeds": [1, 2]},
        "out": str(tmp_path / "out"),
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))

    code, log = cate.run_command("gen-space", str(config_path))
    assert code == 0, log
    code, log = cate.run_command("search", str(config_path))
    assert code == 0, log
    assert (tmp_path / "out/trajectories/random_seed1.jsonl").exists()
    code, log = cate.run_command("report", str(config_path))
    assert code == 0, log
    summary = (tmp_path / "out/report/summary.jsonl").read_text().strip().splitlines()
    assert len(summary) == 1
    row = json.loads(summary[0])
    assert row["algorithm"] == "random"
    assert row["runs"] == 2


def test_cli_binary_exit_codes(tmp_path):
    cli = os.environ.get("CATE_CLI")
    if not cli or not os.path.exists(cli):
        pytest.skip("CATE_CLI not provided")
    proc = subprocess.run([cli, "definitely-not-a-subcommand"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "Usage" in proc.stderr + proc.stdout or "subcommand" in (proc.stderr + proc.stdout).lower()

    config = tmp_path / "broken.json"
    config.write_text("{ not json")
    proc = subprocess.run([cli, "report", "--config", str(config)], capture_output=True, text=True)
    assert proc.returncode == 2

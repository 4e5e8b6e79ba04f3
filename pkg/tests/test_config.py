import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracnse.balance import BalanceParams
from fracnse.config import KEYS, ConfigError, RunConfig, load_config, parse_config
from fracnse.dynamics import ManufacturedTaylorGreen, RandomSpectrum, TaylorGreen

MINIMAL = """\
# minimal run
[grid]
n = 16

[sim]
beta = 0.75
dt = 0.01
t_end = 0.1

[ic]
type = taylor_green
"""


def errors_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.errors


class TestValid:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.grid.shape == (16, 16, 16) and cfg.grid.lx == pytest.approx(2 * math.pi)
        assert cfg.sim.beta == 0.75 and cfg.sim.dealias and cfg.sim.forcing is None
        assert isinstance(cfg.ic, TaylorGreen)
        assert cfg.balance.p == pytest.approx(8.0) and cfg.balance.variant == "consistent"
        assert abs(cfg.balance.constraint_residual()) < 1e-12
        assert cfg.output_dir == "out" and cfg.write_snapshots

    def test_full(self):
        text = MINIMAL.replace("n = 16", "nx = 16\nny = 8\nnz = 8\nlx = 2pi\nly = pi\nlz = pi")
        text = text.replace("type = taylor_green", "type = random\nseed = 4\nk_max = 2.5")
        text += "[balance]\np = 9\ngamma = 1\np1 = 2\nq = inf\n[coherence]\nr_max = 1.0\n"
        text += "[output]\ndir = results\nsnapshots = no\n"
        cfg = parse_config(text)
        assert cfg.grid.shape == (16, 8, 8) and cfg.grid.ly == pytest.approx(math.pi)
        assert isinstance(cfg.ic, RandomSpectrum) and cfg.ic.seed == 4
        assert cfg.balance.p1 == 2 and cfg.coherence.r_max == 1.0 and cfg.coherence.gamma == 1
        assert cfg.output_dir == "results" and not cfg.write_snapshots

    def test_manufactured(self):
        cfg = parse_config(MINIMAL.replace("t_end = 0.1", "t_end = 0.1\nforcing = manufactured"))
        assert isinstance(cfg.sim.forcing, ManufacturedTaylorGreen)

    def test_bytes_and_comments(self):
        cfg = parse_config((MINIMAL + "  # trailing comment\n\n").encode())
        assert isinstance(cfg, RunConfig)

    def test_load(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(MINIMAL)
        assert load_config(path).grid.nx == 16


class TestErrors:
    def test_beta_range(self):
        (e,) = errors_of(MINIMAL.replace("beta = 0.75", "beta = 1.5"))
        assert e.key == "beta" and e.line == 6 and "(0, 1]" in e.message

    def test_duplicate_lists_both_lines(self):
        errs = errors_of(MINIMAL.replace("dt = 0.01", "dt = 0.01\ndt = 0.02"))
        assert any(e.key == "dt" and "7" in e.message and "8" in e.message for e in errs)

    def test_all_errors_collected(self):
        text = MINIMAL.replace("beta = 0.75", "beta = 2").replace("dt = 0.01", "dt = -1")
        text = text.replace("type = taylor_green", "type = taylor_green\ncolour = red")
        keys = {e.key for e in errors_of(text)}
        assert {"beta", "dt", "colour"} <= keys

    def test_missing_required(self):
        errs = errors_of(MINIMAL.replace("t_end = 0.1\n", ""))
        assert any(e.key == "t_end" and "missing" in e.message for e in errs)

    def test_missing_grid(self):
        errs = errors_of(MINIMAL.replace("n = 16\n", ""))
        assert any(e.key == "n" for e in errs)

    def test_n_and_nx(self):
        errs = errors_of(MINIMAL.replace("n = 16", "n = 16\nnx = 16"))
        assert any("either n" in e.message for e in errs)

    @pytest.mark.parametrize("bad,key", [
        ("[grid]\nn = 15", "n"),
        ("[grid]\nn = sixteen", "n"),
        ("[sim]\nbeta = nan", "beta"),
        ("[ic]\ntype = vortex", "type"),
        ("[ic]\ntype = snapshot", "type"),
        ("[balance]\np = 3", "p"),
        ("[coherence]\nr_max = 4.0", "r_max"),
    ])
    def test_single_errors(self, bad, key):
        section, line = bad.split("\n")
        lines = MINIMAL.splitlines()
        if section in lines:
            idx = lines.index(section)
            name = line.split("=")[0].strip()
            lines = [l for l in lines if not (l.startswith(name + " =") and lines.index(l) > idx)]
            lines.insert(idx + 1, line)
            text = "\n".join(lines)
        else:
            text = MINIMAL + bad + "\n"
        assert key in {e.key for e in errors_of(text)}

    def test_structural(self):
        errs = errors_of("[grid\n[nowhere]\njust text\n" + MINIMAL)
        msgs = " ".join(e.message for e in errs)
        assert "malformed" in msgs and "unknown section" in msgs and "key = value" in msgs

    def test_key_outside_section(self):
        assert errors_of("n = 16\n" + MINIMAL)

    def test_invalid_utf8_line(self):
        (e,) = errors_of(MINIMAL.encode() + b"[ic]\n\xff\n")
        assert e.line == 13 and "UTF-8" in e.message

    def test_noncubic_manufactured(self):
        text = MINIMAL.replace("n = 16", "n = 16\nlx = 3").replace("t_end = 0.1", "t_end = 0.1\nforcing = manufactured")
        assert any(e.key == "forcing" for e in errors_of(text))

    def test_error_str_has_line(self):
        err = pytest.raises(ConfigError, parse_config, MINIMAL.replace("beta = 0.75", "beta = 1.5")).value
        assert "line 6: beta:" in str(err)


class TestTotality:
    @given(st.binary(max_size=400))
    def test_bytes(self, data):
        try:
            parse_config(data)
        except ConfigError as exc:
            assert exc.errors

    @given(st.lists(st.tuples(st.sampled_from(sorted(KEYS)),
                              st.sampled_from(sorted({k for s in KEYS.values() for k in s})),
                              st.one_of(st.text(max_size=12), st.floats().map(str), st.integers().map(str))),
                    max_size=12))
    def test_structured(self, entries):
        text = MINIMAL + "".join(f"[{s}]\n{k} = {v}\n" for s, k, v in entries)
        try:
            cfg = parse_config(text)
        except ConfigError as exc:
            assert exc.errors
        else:
            assert isinstance(cfg.balance, BalanceParams)

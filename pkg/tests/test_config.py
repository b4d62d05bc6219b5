import pytest

from veinmt import config as cfg
from veinmt.config import ConfigError


def test_parse_and_build(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nseed = 7\nthreads=1\nmt.epochs = 3\nmt.lr = 0.5 # inline\n"
                 "aug.n = 4\nfvr.split = class\nfvr.full_impostor = yes\nsynth.pose = 1 2 3 4.5\n"
                 "model.gen_widths = 8,16,32,32\ndata = /tmp/x\n")
    rc = cfg.load(p)
    assert rc.seed == 7 and rc.threads == 1
    assert rc.mt.epochs == 3 and rc.mt.lr == 0.5
    assert rc.train_config().seed == 7 and rc.fvr_config().seed == 7
    assert rc.aug.n == 4
    assert rc.fvr.split == "class" and rc.fvr.full_impostor is True
    assert rc.synth.pose == (1, 2, 3, 4.5)
    assert rc.model == {"gen_widths": (8, 16, 32, 32)}
    assert str(rc.path("data")) == "/tmp/x"
    assert rc.path("out") is None


@pytest.mark.parametrize("text,match", [
    ("mt.epochz = 3", "unknown"),
    ("epochs = 3", "unknown"),
    ("mt.seed = 3", "unknown"),
    ("mt.epochs = three", "cannot parse"),
    ("fvr.split = bogus", "split"),
    ("aug.prob = 2", "prob"),
    ("synth.pose = 1 2", "4 values"),
    ("threads = 0", "threads"),
    ("seed 3", "key=value"),
    ("seed = 1\nseed = 2", "duplicate"),
])
def test_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        cfg.build(cfg.parse_lines(text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        cfg.load(tmp_path / "nope.cfg")


def test_defaults_empty():
    rc = cfg.build({})
    assert rc.seed == 0 and rc.threads is None and rc.paths == {}

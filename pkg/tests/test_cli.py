import yaml
from PIL import Image

from vaffnet.cli import build_parser, main
from vaffnet.data import read_junctions


def test_parser_surface():
    p = build_parser()
    a = p.parse_args(["synth", "--count", "3", "--size", "64,48", "--seed", "2", "--out", "d"])
    assert a.size == (64, 48)
    a = p.parse_args(["train", "--config", "c.yaml", "--fusion-mode", "max", "--input-mode", "triplicate"])
    assert a.fusion_mode == "max" and a.input_mode == "triplicate"
    a = p.parse_args(["ablate", "--config", "c.yaml", "--modes", "vgm", "sum"])
    assert a.modes == ["vgm", "sum"]


def test_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--count", "4", "--size", "64,64", "--seed", "1", "--out", str(data), "--faz-radius", "8"]) == 0
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        yaml.safe_dump(
            dict(epochs=2, topology="reduced", n_ch=8, gate_hidden=8, dataset_root=str(data), checkpoint_dir=str(tmp_path / "run"))
        )
    )
    assert main(["train", "--config", str(cfg), "--input-mode", "single"]) == 0
    ck = tmp_path / "run" / "last.pt"
    assert ck.exists()
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--split", "test"]) == 0
    assert "RV DICE" in capsys.readouterr().out
    pred = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(ck), "--sample", str(data / "sample_0003"), "--out", str(pred)]) == 0
    for name in ("rv_prob.png", "faz_prob.png", "heatmap.png", "junctions.json"):
        assert (pred / name).exists()
    assert Image.open(pred / "rv_prob.png").mode == "L"
    read_junctions(pred / "junctions.json")
    out = tmp_path / "ov.png"
    assert main(["visualize", "--sample", str(data / "sample_0003"), "--pred", str(pred), "--out", str(out)]) == 0
    assert Image.open(out).mode == "RGB"
    assert main(["ablate", "--config", str(cfg), "--modes", "vgm", "max"]) == 0
    table = capsys.readouterr().out
    assert "VGM" in table and "MAX" in table

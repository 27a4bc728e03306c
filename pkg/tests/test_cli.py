import json

import pytest

from onenas.cli import main


def test_synth_baseline_run_report(tmp_path, capsys):
    data = tmp_path / "sine.csv"
    assert main(["synth", "noisy_sine", "--steps", "101", "--seed", "2", "--out", str(data)]) == 0
    assert main(["baseline", "--data", str(data), "--target", "value",
                 "--out", str(tmp_path / "base.csv")]) == 0
    header = (tmp_path / "base.csv").read_text().splitlines()[0]
    assert header == "step_index,actual,naive,ma,exp,arima_ogd,arima_ons"

    cfg = tmp_path / "run.toml"
    cfg.write_text(f"p = 10\nnum_train_sets = 4\nnum_validation_sets = 2\nislands = 2\n"
                   f"elite_capacity = 2\ngenerated_per_island = 2\nextinct_freq = 0\n"
                   f"epochs = 1\nnoise_epochs = 0\ngenerations = 9\n"
                   f"data = '{data}'\ntarget = 'value'\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out-dir", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 4
    assert main(["report", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["generations"] == 10 and summary["predictions"] == 100
    assert len((out / "win_rate.csv").read_text().splitlines()) == 11
    assert (out / "rmse_over_time.csv").read_text().startswith("step_index,onenas,naive")


def test_report_figures(tmp_path):
    pytest.importorskip("matplotlib")
    data = tmp_path / "d.csv"
    main(["synth", "ar2", "--steps", "41", "--out", str(data)])
    out = tmp_path / "o"
    assert main(["run", "--data", str(data), "--target", "value", "--generations", "3",
                 "--out-dir", str(out)]) == 0
    assert main(["report", str(out), "--figures"]) == 0
    assert (out / "rmse_over_time.png").stat().st_size > 0
    assert (out / "win_rate.png").exists()


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--out-dir", str(tmp_path)]) == 2
    assert "required" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("nonsense_key = 1\n")
    assert main(["run", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["report", str(tmp_path / "nowhere")]) == 2
    with pytest.raises(SystemExit):
        main(["fly"])

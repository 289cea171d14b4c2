import csv
import json

import pytest

from invrisk import __version__
from invrisk.harness.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, build_parser, main
from invrisk.harness.tensor_io import read_tensor
from invrisk.model.risk_model import Calibration

SMALL = ["--n-instances", "3", "--m", "16", "--log-level", "warning"]


def _error_line(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_score(tmp_path):
    assert main(["score", "--output-dir", str(tmp_path)] + SMALL) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report['schema'] == 1
    assert report['toolkit_version'] == __version__
    assert len(report['instances']) == 3
    assert Calibration.load(tmp_path / "calibration.json").alpha == report['calibration']['alpha']


def test_score_against_a_reference_calibration(tmp_path):
    main(["score", "--output-dir", str(tmp_path / "ref")] + SMALL)
    cal = tmp_path / "ref" / "calibration.json"
    assert main(["score", "--output-dir", str(tmp_path), "--calibration", str(cal), "--seed", "8"] + SMALL) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report['calibration'] == json.loads(cal.read_text())


def test_score_creates_the_output_directory(tmp_path):
    out = tmp_path / "fresh" / "run"
    assert main(["score", "--output-dir", str(out)] + SMALL) == 0
    assert (out / "report.json").is_file()
    assert Calibration.load(out / "calibration.json").beta == 5.0


def test_attack(tmp_path):
    assert main(["attack", "--output-dir", str(tmp_path), "--iters", "5"] + SMALL) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report['tier_weights'] == [1.0]
    assert all('expected_mse' in inst for inst in report['instances'])


def test_sweep(tmp_path):
    args = ["sweep", "--output-dir", str(tmp_path), "--defense", "prune", "--grid", "0,0.5,1", "--iters", "5"]
    assert main(args + SMALL) == 0
    with (tmp_path / "sweep.csv").open(newline="") as source:
        table = list(csv.reader(source))
    assert len(table) == 4
    assert [float(row[0]) for row in table[1:]] == [0.0, 0.5, 1.0]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report['aggregate']['sweep']['defense'] == "prune"
    assert {"mean_ic_lower_bound", "mean_reduced_rank"} <= set(table[0])


def test_defend(tmp_path):
    args = ["defend", "--output-dir", str(tmp_path), "--defense", "gnp", "--delta", "0.05", "--iters", "5"]
    assert main(args + SMALL) == 0
    rows = json.loads((tmp_path / "report.json").read_text())['aggregate']['sweep']['rows']
    assert [row['defense_param'] for row in rows] == [0.05]


def test_correlate_from_report(tmp_path, capsys):
    args = ["correlate", "--output-dir", str(tmp_path), "--iters", "5", "--n-instances", "10", "--m", "16",
            "--log-level", "warning"]
    assert main(args) == 0
    capsys.readouterr()
    assert main(["correlate", "--report", str(tmp_path / "report.json")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed['invre_vs_expected_mse']['n'] == 10


def test_spectrum(tmp_path):
    assert main(["spectrum", "--output-dir", str(tmp_path)] + SMALL) == 0
    document = json.loads((tmp_path / "spectrum.json").read_text())
    assert len(document['instances']) == 3
    assert len(document['instances'][0]['sigma']) == 16


def test_gen_data_feeds_score(tmp_path):
    data = tmp_path / "data.ivt"
    assert main(["gen-data", "--out", str(data), "--dataset-kind", "synthetic_gaussian"] + SMALL) == 0
    assert read_tensor(data).shape == [3, 16]
    labels = tmp_path / "data.labels.ivt"
    assert read_tensor(labels).data.tolist() == [0.0, 1.0, 0.0]
    args = ["score", "--output-dir", str(tmp_path), "--data", str(data), "--labels", str(labels),
            "--dims", "16,8,2", "--n-instances", "3", "--log-level", "warning"]
    assert main(args) == 0


def test_config_file(tmp_path):
    config = tmp_path / "run.toml"
    config.write_text(f'n_instances = 2\noutput_dir = "{tmp_path / "out"}"\n[dataset]\nm = 9\n')
    assert main(["score", "--config", str(config), "--n-instances", "5", "--log-level", "warning"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(report['instances']) == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args(["--version"])
    assert e.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["score", "--defense", "blur"])
    assert e.value.code == EXIT_CONFIG
    line = _error_line(capsys)
    assert line['error'] == "usage_error" and line['exit'] == EXIT_CONFIG


def test_config_error(tmp_path, capsys):
    assert main(["score", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG
    line = _error_line(capsys)
    assert line == {'error': "config_error", 'exit': EXIT_CONFIG, 'message': line['message']}
    assert "absent.json" in line['message']


@pytest.mark.parametrize("document", [
    {'attack': {'iters': "many"}},
    {'defense': {'kind': "gnp", 'delta': "big"}},
    {'n_instances': [3]},
])
def test_wrongly_typed_values_are_config_errors(tmp_path, capsys, document):
    config = tmp_path / "run.json"
    config.write_text(json.dumps(document))
    args = ["attack", "--config", str(config), "--output-dir", str(tmp_path)] + SMALL
    assert main(args) == EXIT_CONFIG
    line = _error_line(capsys)
    assert line['error'] == "config_error" and line['exit'] == EXIT_CONFIG


def test_correlation_needs_ten_instances(tmp_path, capsys):
    args = ["correlate", "--output-dir", str(tmp_path), "--iters", "5"] + SMALL
    assert main(args) == EXIT_CONFIG
    assert _error_line(capsys)['error'] == "config_error"


def test_numeric_error(tmp_path, capsys):
    # identity layers do not saturate, so a huge step overflows the objective
    config = tmp_path / "run.json"
    config.write_text(json.dumps({'map': {'network': {'dims': [16, 4, 2], 'activations': ["identity", "identity"]}},
                                  'attack': {'iters': 5, 'step_size': 1e300}}))
    args = ["attack", "--config", str(config), "--output-dir", str(tmp_path)] + SMALL
    assert main(args) == EXIT_NUMERIC
    assert _error_line(capsys)['error'] == "numeric_error"


def test_bad_magic(tmp_path, capsys):
    data = tmp_path / "data.ivt"
    data.write_bytes(b"NOPE" + bytes(16))
    args = ["score", "--data", str(data), "--dims", "4,3,2", "--n-instances", "1", "--log-level", "warning"]
    assert main(args) == EXIT_IO
    line = _error_line(capsys)
    assert line['error'] == "bad_magic" and line['exit'] == EXIT_IO
    assert "offset 0" in line['message']


def test_truncated_payload(tmp_path, capsys):
    data = tmp_path / "data.ivt"
    data.write_bytes(b"")
    args = ["score", "--data", str(data), "--dims", "4,3,2", "--n-instances", "1", "--log-level", "warning"]
    assert main(args) == EXIT_IO
    assert _error_line(capsys)['error'] == "truncated_payload"

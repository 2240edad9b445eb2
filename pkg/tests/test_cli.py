import json
import socket
import threading

import pytest
import yaml

from risoran import codebook_io
from risoran.cli import build_parser, main
from risoran.harness import load_output
from risoran.scenario import preset_document


@pytest.fixture(scope="module")
def quick_config(tmp_path_factory):
    doc = preset_document("outdoor")
    doc.update(name="quick", speed=1.0, trajectory="sweep")
    path = tmp_path_factory.mktemp("cfg") / "quick.yaml"
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def out_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_parser_rejects_unknown_algorithm():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["mobility", "run", "--algorithm", "magic"])


def test_codebook_build(tmp_path, capsys, quick_config):
    assert main(["codebook", "build", "--config", quick_config, "--ris-step", "1", "--out", str(tmp_path)]) == 0
    info = out_json(capsys)
    cb = codebook_io.load(info["path"])
    assert len(cb) == info["codewords"] == 41


def test_codebook_build_optimize(tmp_path, capsys, quick_config):
    assert main(["codebook", "build", "--config", quick_config, "--optimize", "--candidates", "2",
                 "--seed", "3", "--out", str(tmp_path)]) == 0
    assert out_json(capsys)["pre_phase_seed"] in (3, 4)


def test_mobility_run_and_summarize(tmp_path, capsys, quick_config):
    assert main(["mobility", "run", "--config", quick_config, "--algorithm", "trend", "--seed", "2",
                 "--report-interval-ms", "100", "--out", str(tmp_path)]) == 0
    paths = out_json(capsys)
    trace = load_output(paths["csv"])
    assert trace.meta["algorithm"] == "trend" and trace.meta["seed"] == 2
    assert trace.column("timestamp_ms")[1] == 100
    assert main(["summarize", paths["csv"]]) == 0
    assert out_json(capsys)["rows"] == len(trace)


def test_mobility_bad_interval(quick_config):
    with pytest.raises(SystemExit):
        main(["mobility", "run", "--config", quick_config, "--report-interval-ms", "0"])


def test_coverage_run(tmp_path, capsys):
    assert main(["coverage", "run", "--config", "indoor", "--out", str(tmp_path)]) == 0
    grid = load_output(out_json(capsys)["csv"])
    assert len(grid.cells) == 126


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_three_roles(tmp_path, capsys, quick_config):
    ports = ["--ran-port", str(free_port()), "--ris-port", str(free_port())]
    codes = {}

    def role(name, *extra):
        codes[name] = main(["serve", name, "--config", quick_config, *ports, *extra])

    threads = [threading.Thread(target=role, args=("ris",)),
               threading.Thread(target=role, args=("ran", "--out", str(tmp_path))),
               threading.Thread(target=role, args=("xapp",))]
    for th in threads:
        th.start()
    for th in threads:
        th.join(60)
    assert codes == {"ris": 0, "ran": 0, "xapp": 0}
    (csv_path,) = tmp_path.glob("*.csv")
    served = load_output(csv_path)

    assert main(["mobility", "run", "--config", quick_config, "--out", str(tmp_path / "mem")]) == 0
    capsys.readouterr()
    (mem_path,) = (tmp_path / "mem").glob("*.csv")
    assert csv_path.read_text() == mem_path.read_text()
    assert len(served) > 0

# test_pipelines.py

import json

import pytest
import yaml

from CactusEval import __version__, settings
from CactusEval.pipelines import OutputPipeline, to_csv, to_json
from utils.Table import render_table


def test_process_by_extension(tmp_path):
    pipeline = OutputPipeline(tmp_path / "out")
    pipeline.open()
    pipeline.process("a.json", {"b": 1, "a": [1, 2]})
    pipeline.process("nested/b.yaml", {"name": "Lack of care"})
    pipeline.process("c.txt", "plain\n")

    assert (tmp_path / "out" / "a.json").read_text(encoding="utf-8") == to_json({"a": [1, 2], "b": 1})
    assert yaml.safe_load((tmp_path / "out" / "nested" / "b.yaml").read_text(encoding="utf-8")) == \
        {"name": "Lack of care"}
    assert (tmp_path / "out" / "c.txt").read_text(encoding="utf-8") == "plain\n"
    assert pipeline.written == ["a.json", "nested/b.yaml", "c.txt"]


def test_text_payload_is_written_verbatim(tmp_path):
    pipeline = OutputPipeline(tmp_path)
    pipeline.process("report.json", '{"b": 1}\n')
    pipeline.process("report.csv", "a,b\n")
    assert (tmp_path / "report.json").read_text(encoding="utf-8") == '{"b": 1}\n'
    assert pipeline.written == ["report.json", "report.csv"]
    with pytest.raises(TypeError):
        pipeline.process("table.csv", {"a": 1})
    assert not (tmp_path / "table.csv").exists()


def test_close_writes_stamp(tmp_path):
    pipeline = OutputPipeline(tmp_path)
    pipeline.open()
    pipeline.process("x.txt", "")
    pipeline.close("split", {"seed": 9}, {"manifest": "m.jsonl"})

    stamp = json.loads((tmp_path / settings.STAMP_FILE).read_text(encoding="utf-8"))
    assert stamp == {"schema_version": settings.SCHEMA_VERSION, "tool": "CactusEval", "version": __version__,
                     "command": "split", "seed": 9, "config": {"seed": 9},
                     "arguments": {"manifest": "m.jsonl"}, "outputs": ["x.txt"]}
    assert json.loads((tmp_path / settings.STAMP_TIME_FILE).read_text(encoding="utf-8"))["timestamp"]


def test_to_csv():
    assert to_csv(["a", "b"], [[1, "x,y"], [2, ""]]) == 'a,b\n1,"x,y"\n2,\n'
    assert to_csv(["n", "v"], [[1, 0.5], [2, None]]) == "n,v\n1,0.5\n2,\n"
    assert to_csv(["a"], []) == "a\n"


def test_render_table():
    text = render_table(["Name", "N"], [["canker", 3], ["aphid", 12]], align="lr")
    assert text == "Name     N\ncanker   3\naphid   12\n"


def test_render_table_strips_trailing_space():
    assert render_table(["A", "B"], [["long value", ""]]) == "A           B\nlong value\n"

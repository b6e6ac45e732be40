import json

from bbox.cli import main
from bbox.format import decode_header, header_byte_length


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_create_validate_inspect_roundtrip(tmp_path, capsys):
    out = tmp_path / "d.bbox"
    code, stdout, _ = run(
        capsys, "create", "--from", "synthetic:100x8x8x1", "--out", str(out),
        "--page-size", "65536", "--seed", "7",
    )
    assert code == 0
    assert "100 samples" in stdout

    code, stdout, _ = run(capsys, "validate", str(out))
    assert code == 0
    assert "valid" in stdout

    code, stdout, _ = run(capsys, "inspect", str(out), "--json")
    assert code == 0
    info = json.loads(stdout)
    assert info["num_samples"] == 100
    assert info["page_size"] == 65536


def test_inspect_default_page_size(tmp_path, capsys):
    out = tmp_path / "d8.bbox"
    code, _, _ = run(capsys, "create", "--from", "synthetic:3x4x4x1", "--out", str(out))
    assert code == 0
    code, stdout, _ = run(capsys, "inspect", str(out), "--json")
    assert json.loads(stdout)["page_size"] == 8388608


def test_create_rejects_bad_page_size(tmp_path, capsys):
    code, _, err = run(
        capsys, "create", "--from", "synthetic:10x4x4x1",
        "--out", str(tmp_path / "x.bbox"), "--page-size", "1000",
    )
    assert code == 2
    assert "power of two" in err


def test_create_compress_prob_zero_is_all_raw(tmp_path, capsys):
    out = tmp_path / "raw.bbox"
    code, stdout, _ = run(
        capsys, "create", "--from", "synthetic:50x8x8x1", "--out", str(out),
        "--page-size", "65536", "--compress-prob", "0",
    )
    assert code == 0
    assert "'RAW': 50" in stdout and "RLE" not in stdout


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    code, _, _ = run(capsys, "create", "--frobnicate", "x")
    assert code == 2


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, _ = run(capsys, "explode")
    assert code == 2


def test_inspect_corrupt_magic(tmp_path, capsys):
    bad = tmp_path / "bad.bbox"
    bad.write_bytes(b"WRONGMAG" + b"\x00" * 128)
    code, _, err = run(capsys, "inspect", str(bad))
    assert code == 1
    assert "bad magic" in err


def test_inspect_sample_out_of_range(tmp_path, capsys):
    out = tmp_path / "d.bbox"
    run(capsys, "create", "--from", "synthetic:5x4x4x1", "--out", str(out),
        "--page-size", "65536")
    code, _, err = run(capsys, "inspect", str(out), "--sample", "99")
    assert code == 1
    assert "out of range" in err


def test_inspect_sample_offsets_consistent_with_header(tmp_path, capsys):
    out = tmp_path / "d.bbox"
    run(capsys, "create", "--from", "synthetic:5x4x4x1", "--out", str(out),
        "--page-size", "65536")
    code, stdout, _ = run(capsys, "inspect", str(out), "--sample", "0", "--json")
    assert code == 0
    info = json.loads(stdout)
    raw = out.read_bytes()
    header = decode_header(raw[: header_byte_length(info["num_fields"])])
    image_cell = info["sample"]["cells"][0]["cell"]
    assert header.heap_offset <= image_cell[0] < header.alloc_table_offset


def test_validate_invalid_file_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.bbox"
    bad.write_bytes(b"\x00" * 16)
    code, stdout, _ = run(capsys, "validate", str(bad))
    assert code == 1


def test_dump_is_deterministic(tmp_path, capsys):
    out = tmp_path / "d.bbox"
    run(capsys, "create", "--from", "synthetic:30x8x8x1", "--out", str(out),
        "--page-size", "65536", "--seed", "3")
    args = ["dump", str(out), "--order", "random", "--seed", "5", "--batch-size", "7",
            "--pipeline", "decode|flip:0.5"]
    code1, out1, _ = run(capsys, *args)
    code2, out2, _ = run(capsys, *args)
    assert code1 == code2 == 0
    assert out1 == out2
    lines = [json.loads(line) for line in out1.strip().splitlines()]
    assert len(lines) == 5
    all_indices = [i for rec in lines for i in rec["indices"]]
    assert sorted(all_indices) == list(range(30))
    assert lines[0]["image_dtype"] == "uint8"


def test_bench_cli_and_report(tmp_path, capsys):
    out = tmp_path / "d.bbox"
    run(capsys, "create", "--from", "synthetic:60x8x8x1", "--out", str(out),
        "--page-size", "65536")
    report_path = tmp_path / "report.json"
    code, stdout, _ = run(
        capsys, "bench", "--mode", "read-only", "--loader", "container",
        "--data", str(out), "--out", str(report_path),
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["counters"]["page_fetches"] == report["counters"]["page_fetches"]
    # fetch count equals the page count of the container
    code, info_out, _ = run(capsys, "inspect", str(out), "--json")
    pages = json.loads(info_out)["num_pages"]
    assert report["counters"]["page_fetches"] == pages

    code2, stdout2, _ = run(
        capsys, "bench", "--mode", "read-only", "--loader", "container", "--data", str(out),
    )
    assert code2 == 0
    counters1 = [l for l in stdout.splitlines() if l.startswith("counter")]
    counters2 = [l for l in stdout2.splitlines() if l.startswith("counter")]
    assert counters1 == counters2


def test_bench_file_per_sample_requires_dir(tmp_path, capsys):
    code, _, err = run(capsys, "bench", "--mode", "read-only", "--loader", "file-per-sample")
    assert code == 2
    assert "--dir" in err


def test_bench_invalid_mode(tmp_path, capsys):
    code, _, _ = run(capsys, "bench", "--mode", "warp-speed", "--loader", "container",
                     "--data", "x")
    assert code == 2


def test_create_from_unknown_source(tmp_path, capsys):
    code, _, err = run(capsys, "create", "--from", "nonsense", "--out",
                       str(tmp_path / "x.bbox"))
    assert code == 2

import pytest

from pagecache_sim.scenario import (ScenarioError, bundled_scenarios, load_scenario,
                                    load_scenario_text, parse_quantity)

MINIMAL = """\
version: 1
name: mini
platform:
  hosts:
    - name: node
      total_mem: 8GB
      disks:
        - {name: d, capacity: 100GB, read_bw: 465MB/s, write_bw: 465MB/s}
      cache:
        dirty_ratio: 0.2
workload:
  chunk_size: 100MB
  storage: {host: node, disk: d}
  pipeline:
    tasks:
      - name: t1
        cpu_time: 1
        inputs: [{file: a, size: 1GB}]
        outputs: [{file: b, size: 1GB}]
"""


@pytest.mark.parametrize("text,expected", [
    ("465MB/s", 465e6), ("246GiB", 246 * 2**30), ("1.5GB", 1.5e9), ("100", 100),
    (3.5, 3.5), ("2e9", 2e9), ("10 MB", 10**7)])
def test_parse_quantity(text, expected):
    assert parse_quantity(text) == expected


@pytest.mark.parametrize("bad", ["fast", "12 parsecs", True, None])
def test_parse_quantity_rejects(bad):
    with pytest.raises(ScenarioError):
        parse_quantity(bad)


def test_minimal_scenario_runs():
    sc = load_scenario_text(MINIMAL)
    assert sc.name == "mini"
    assert sc.hosts[0].total_mem == 8 * 10**9
    res = sc.run(check=True)
    [[t]] = res.timings
    assert t.read == pytest.approx(1e9 / 465e6)
    s = res.summary()
    assert s["tasks"][0]["compute"] == 1.0
    assert s["instances"] == 1


def _broken(old, new):
    assert old in MINIMAL
    return MINIMAL.replace(old, new)


@pytest.mark.parametrize("old,new,message", [
    ("dirty_ratio: 0.2", "dirty_ratio: 1.5", "dirty_ratio"),
    ("chunk_size: 100MB", "chunk_size: 2GB", "chunk size"),
    ("version: 1", "version: 2", "version"),
    ("{host: node, disk: d}", "{host: nope}", "unknown host"),
    ("{host: node, disk: d}", "{host: node, disk: x}", "no disk"),
    ("total_mem: 8GB", "total_mem: -1", "must be > 0"),
    ("cpu_time: 1", "cpu_time: -1", "must be >= 0"),
    ("total_mem: 8GB", "total_mem: 0.5GB", "does not fit"),
    ("capacity: 100GB", "capacity: 1GB", "capacity"),
    ("  pipeline:\n", "  instances: 0\n  pipeline:\n", "must be > 0"),
])
def test_validation_errors(old, new, message):
    with pytest.raises(ScenarioError, match=message):
        load_scenario_text(_broken(old, new))


def test_error_reports_line():
    with pytest.raises(ScenarioError) as exc:
        load_scenario_text(_broken("dirty_ratio: 0.2", "dirty_ratio: 1.5"))
    assert exc.value.line == 10
    assert "platform.hosts[0].cache.dirty_ratio" in str(exc.value)


def test_yaml_syntax_error():
    with pytest.raises(ScenarioError, match="line"):
        load_scenario_text("version: 1\nplatform: [\n")


def test_missing_field():
    with pytest.raises(ScenarioError, match="missing"):
        load_scenario_text("version: 1\n")


def test_write_policy_validated():
    with pytest.raises(ScenarioError, match="write_policy"):
        load_scenario_text(MINIMAL + "simulation: {write_policy: sometimes}\n")


def test_nfs_server_policy_validated():
    text = MINIMAL.replace("  hosts:", """  links: [{name: net, bandwidth: 3000MB/s}]
  mounts: [{name: m, client: node, server: node, disk: d, link: net, server_policy: writeback}]
  hosts:""")
    with pytest.raises(ScenarioError, match="writethrough"):
        load_scenario_text(text)


def test_bundled_set():
    assert bundled_scenarios() == sorted([
        "exp1_3gb", "exp1_20gb", "exp1_50gb", "exp1_75gb", "exp1_100gb",
        "exp2_concurrent", "exp3_nfs", "exp4_workflow"])


@pytest.mark.parametrize("name", ["exp1_20gb", "exp1_20gb.scenario", "exp1_20gb.yaml"])
def test_load_by_name(name):
    assert load_scenario(name).name == "exp1_20gb"


def test_load_by_path(tmp_path):
    p = tmp_path / "custom.yaml"
    p.write_text(MINIMAL)
    assert load_scenario(p).name == "mini"


def test_load_missing():
    with pytest.raises(ScenarioError):
        load_scenario("/nonexistent/file.yaml")


def test_bundled_platform_parameters():
    sc = load_scenario("exp1_20gb")
    host = sc.hosts[0]
    assert host.total_mem == 246 * 2**30
    assert host.memory_bw == 4812e6
    assert host.disks[0].read_bw == 465e6
    assert [t.cpu_time for t in sc.pipeline.tasks] == [28, 28, 28]
    nfs = load_scenario("exp3_nfs")
    assert {l.name: l.bandwidth for l in nfs.links} == {"net": 3000e6}
    server = next(h for h in nfs.hosts if h.name == nfs.mounts[0].server)
    assert server.disks[0].read_bw == 445e6
    wf = load_scenario("exp4_workflow")
    assert [t.cpu_time for t in wf.pipeline.tasks] == [137, 614, 76, 272]

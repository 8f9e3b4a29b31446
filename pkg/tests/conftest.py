import base64
import json
from pathlib import Path

import pytest

from supportscope.datasets import convert_to_mcq, load_manifest
from supportscope.inference import EndpointConfig
from supportscope.mock_server import MockServer, ScriptedModelSpec

# 1x1 transparent PNG
PNG_1PX = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg=="
)

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


def write_manifest(root: Path, n_items: int, class_names, task_id="toy", modality="radiology",
                   labels=None, images=True, overrides=None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    if images:
        (root / "img").mkdir(exist_ok=True)
    lines = [json.dumps({"task_id": task_id, "modality": modality, "class_names": list(class_names)})]
    for i in range(n_items):
        label = labels[i] if labels is not None else i % len(class_names)
        entry = {"item_id": f"{task_id}-{i:04d}", "image_path": f"img/{i:04d}.png", "label_index": label}
        if overrides and i in overrides:
            entry["modality"] = overrides[i]
        lines.append(json.dumps(entry))
        if images:
            (root / "img" / f"{i:04d}.png").write_bytes(PNG_1PX)
    path = root / f"{task_id}.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def make_items(tmp_path: Path, n_items: int, n_classes: int = 4, task_id="toy", modality="radiology",
               shuffle=False, seed=0):
    names = [f"class{c}" for c in range(n_classes)]
    path = write_manifest(tmp_path / task_id, n_items, names, task_id=task_id, modality=modality)
    return convert_to_mcq(load_manifest(path), option_shuffle=shuffle, seed=seed)


def fast_endpoint(url: str, **kw) -> EndpointConfig:
    defaults = dict(base_url=url, model_name="mock-vlm", timeout=10.0, max_retries=3, max_concurrency=8,
                    backoff_base=0.001)
    defaults.update(kw)
    return EndpointConfig(**defaults)


@pytest.fixture
def mock_server():
    servers = []

    def start(spec: ScriptedModelSpec) -> MockServer:
        server = MockServer(spec)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.stop()


# ------------------------------------------------------------ acceptance summary

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    failed = report.failed
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get(number, (title, "PASS"))[1]
        _ACCEPTANCE[number] = (title, "FAIL" if failed or prev == "FAIL" else "PASS")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")

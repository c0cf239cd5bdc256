"""Job configuration files.

INI-style ``[section]`` blocks of ``key = value`` lines. Recognised sections:
``[archive]``, ``[job]``, one ``[detector <id>]`` per detector, and an
optional ``[scene]`` with ``[signal <name>]`` blocks that render a synthetic
archive before the run. Unknown sections or keys are errors. Relative paths
resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .archive import DEFAULT_PATTERN
from .ada import JobSpec
from .errors import ConfigError, PlanError
from .eventstore import BACKENDS
from .registry import DetectorConfig
from .synthbench import DEFAULT_START, SceneSpec, Signal

ARCHIVE_KEYS = {"root", "pattern", "manifest"}
JOB_KEYS = {
    "job_id", "unit_len", "pad", "workers", "backend", "output",
    "detectors", "run_id", "merge_dt", "merge_df", "seed",
}
DETECTOR_META = {"kind", "context_pad", "tag"}
SCENE_KEYS = {
    "duration", "rate", "noise_rms", "noise_kind", "seed", "channel",
    "start", "file_len", "truth",
}
SIGNAL_META = {"kind", "start", "snr_db"}
PATH_PARAMS = {"template_path", "model_path"}
SIGNAL_PARAMS = {
    "upsweep": ({"f0", "f1", "duration"}, set()),
    "tone": ({"freq", "duration"}, {"half_band"}),
    "pulse_train": ({"freq", "pulse_len", "period", "count"}, {"jitter", "half_band"}),
}


def parse_value(text: str):
    """``none`` -> None, ``a, b`` -> tuple, numbers -> int/float, else the string."""
    text = text.strip()
    if text.lower() == "none":
        return None
    if "," in text:
        return tuple(parse_value(part) for part in text.split(","))
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


@dataclass(frozen=True)
class JobConfig:
    path: Path
    archive_root: Path | None
    pattern: str
    manifest_path: Path | None
    job: JobSpec
    scene: SceneSpec | None
    scene_file_len: float
    truth_path: Path | None
    seed: int
    config_hash: str

    def metadata(self) -> dict:
        return {"config": str(self.path), "config_hash": self.config_hash, "seed": self.seed}


def _unknown(section: str, keys, allowed) -> None:
    bad = sorted(set(keys) - set(allowed))
    if bad:
        raise ConfigError(f"[{section}]: unknown keys {bad}")


def _number(section, raw, key, cast=float, default=None):
    if key not in raw:
        if default is None:
            raise ConfigError(f"[{section}]: missing required key {key!r}")
        return default
    try:
        return cast(raw[key])
    except ValueError:
        raise ConfigError(f"[{section}]: {key} = {raw[key]!r} is not a valid {cast.__name__}") from None


def load_config(path) -> JobConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)


def parse_config(text: str, path: Path = Path("job.cfg")) -> JobConfig:
    base = path.parent
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    def resolve(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base / q

    detectors: dict[str, DetectorConfig] = {}
    signals: list[Signal] = []
    for name in cp.sections():
        head, _, ident = name.partition(" ")
        ident = ident.strip()
        if head not in ("archive", "job", "scene", "detector", "signal"):
            raise ConfigError(f"unknown section [{name}]")
        if head in ("detector", "signal") and not ident:
            raise ConfigError(f"[{head}] needs a name, e.g. [{head} up]")
        if head in ("archive", "job", "scene") and ident:
            raise ConfigError(f"unknown section [{name}]")
        raw = dict(cp[name])
        if head == "detector":
            detectors[ident] = _detector(ident, raw, resolve)
        elif head == "signal":
            signals.append(_signal(name, raw))

    arch = dict(cp["archive"]) if cp.has_section("archive") else {}
    _unknown("archive", arch, ARCHIVE_KEYS)
    if "root" not in arch and "manifest" not in arch:
        raise ConfigError("[archive] needs root or manifest")
    root = resolve(arch["root"]) if "root" in arch else None
    manifest = resolve(arch["manifest"]) if "manifest" in arch else None

    if not cp.has_section("job"):
        raise ConfigError("missing [job] section")
    job = dict(cp["job"])
    _unknown("job", job, JOB_KEYS)
    if "detectors" in job:
        wanted = [d.strip() for d in job["detectors"].split(",") if d.strip()]
        missing = [d for d in wanted if d not in detectors]
        if missing:
            raise PlanError(f"[job] lists unknown detector ids {missing}")
    else:
        wanted = list(detectors)
    backend = job.get("backend", "flat")
    if backend not in BACKENDS:
        raise ConfigError(f"[job]: backend must be one of {BACKENDS}")
    spec = JobSpec(
        job_id=job.get("job_id", path.stem),
        detectors=tuple(detectors[d] for d in wanted),
        unit_len=_number("job", job, "unit_len"),
        pad=_number("job", job, "pad") if "pad" in job else None,
        workers=_number("job", job, "workers", int, 1),
        backend=backend,
        output=str(resolve(job["output"])) if "output" in job else None,
        run_id=job.get("run_id"),
        merge_dt=_number("job", job, "merge_dt", float, 0.5),
        merge_df=_number("job", job, "merge_df", float, 10.0),
    )
    seed = _number("job", job, "seed", int, 0)

    scene = None
    file_len = 600.0
    truth = None
    if cp.has_section("scene"):
        sc = dict(cp["scene"])
        _unknown("scene", sc, SCENE_KEYS)
        if root is None:
            raise ConfigError("[scene] renders into [archive] root, which is missing")
        start = DEFAULT_START
        if "start" in sc:
            try:
                start = datetime.fromisoformat(sc["start"].replace("Z", "+00:00"))
            except ValueError:
                raise ConfigError(f"[scene]: bad start {sc['start']!r}") from None
            if start.tzinfo is None:
                start = start.replace(tzinfo=timezone.utc)
        try:
            scene = SceneSpec(
                duration=_number("scene", sc, "duration"),
                rate=_number("scene", sc, "rate", int),
                noise_rms=_number("scene", sc, "noise_rms", float, 0.01),
                signals=tuple(signals),
                seed=_number("scene", sc, "seed", int, seed),
                noise_kind=sc.get("noise_kind", "white"),
                channel_id=sc.get("channel", "S"),
                start_utc=start,
            )
        except ValueError as exc:
            raise ConfigError(f"[scene]: {exc}") from exc
        file_len = _number("scene", sc, "file_len", float, 600.0)
        truth = resolve(sc["truth"]) if "truth" in sc else None
    elif signals:
        raise ConfigError("[signal] blocks require a [scene] section")

    digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    return JobConfig(path, root, arch.get("pattern", DEFAULT_PATTERN), manifest, spec, scene, file_len,
                     truth, seed, digest)


def _detector(ident: str, raw: dict, resolve) -> DetectorConfig:
    if "kind" not in raw:
        raise ConfigError(f"[detector {ident}]: missing kind")
    params = {}
    for k, v in raw.items():
        if k in DETECTOR_META:
            continue
        params[k] = str(resolve(v)) if k in PATH_PARAMS else parse_value(v)
    try:
        pad = float(raw.get("context_pad", 0.0))
    except ValueError:
        raise ConfigError(f"[detector {ident}]: context_pad must be a number") from None
    cfg = DetectorConfig(ident, raw["kind"], params, pad, raw.get("tag", ""))
    cfg.validate()
    return cfg


def _signal(name: str, raw: dict) -> Signal:
    missing = sorted(SIGNAL_META - set(raw))
    if missing:
        raise ConfigError(f"[{name}]: missing keys {missing}")
    kind = raw["kind"]
    if kind not in SIGNAL_PARAMS:
        raise ConfigError(f"[{name}]: unknown signal kind {kind!r}")
    required, optional = SIGNAL_PARAMS[kind]
    keys = set(raw) - SIGNAL_META
    _unknown(name, keys, required | optional)
    if required - keys:
        raise ConfigError(f"[{name}]: missing keys {sorted(required - keys)}")
    try:
        params = {k: parse_value(v) for k, v in raw.items() if k not in SIGNAL_META}
        return Signal(kind, float(raw["start"]), float(raw["snr_db"]), params)
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc

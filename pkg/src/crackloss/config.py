"""Flat key=value configuration parsing and validation.

The accepted syntax is a TOML-compatible subset kept deliberately small:
one `key = value` per line, `#` comments, bare dotted keys, double-quoted
strings, booleans, integers, floats, and one-level bracketed arrays. Every
recognized key is validated against its owning module's rules before any
work starts; the first violation is reported with its key path.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .bench import TrainConfig
from .data import SynthConfig
from .errors import ConfigError
from .loss import HolisticConfig, WeightSpec
from .metrics import DEFAULT_GRID
from .model import UNetConfig

_KEY_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")

DEFAULT_BETAS = (0.25, 0.375, 0.5, 0.625, 0.75, 0.85, 0.875, 0.9, 0.95, 1.0)


def _parse_scalar(tok: str, lineno: int):
    tok = tok.strip()
    if not tok:
        raise ConfigError(f"line {lineno}: empty value")
    if tok.startswith('"'):
        if len(tok) < 2 or not tok.endswith('"'):
            raise ConfigError(f"line {lineno}: unterminated string {tok}")
        inner = tok[1:-1]
        if '"' in inner:
            raise ConfigError(f"line {lineno}: stray quote inside string {tok}")
        return inner
    if tok == "true":
        return True
    if tok == "false":
        return False
    if re.fullmatch(r"[+-]?\d+", tok):
        return int(tok)
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {tok!r} (strings "
                          f"must be double-quoted)") from None


def _split_array(body: str, lineno: int) -> list[str]:
    parts = []
    cur = []
    in_str = False
    for ch in body:
        if ch == '"':
            in_str = not in_str
            cur.append(ch)
        elif ch == "," and not in_str:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if in_str:
        raise ConfigError(f"line {lineno}: unterminated string in array")
    if "".join(cur).strip():
        parts.append("".join(cur))
    return parts


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str) -> dict:
    """Parses the flat subset into a {key: value} dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        if val.startswith("["):
            if not val.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated array for {key}")
            out[key] = [_parse_scalar(tok, lineno)
                        for tok in _split_array(val[1:-1], lineno)]
        else:
            out[key] = _parse_scalar(val, lineno)
    return out


def load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


@dataclass(frozen=True)
class CliConfig:
    synth: SynthConfig
    train: TrainConfig
    train_count: int
    test_count: int
    n_seeds: int
    output_dir: str
    betas: tuple
    train_manifest: str
    test_manifest: str


def _take(raw: dict, key: str, kinds, default):
    if key not in raw:
        return default
    val = raw.pop(key)
    if kinds is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kinds) or isinstance(val, bool) and kinds is not bool:
        want = kinds.__name__ if isinstance(kinds, type) else "value"
        raise ConfigError(f"{key}: expected {want}, got {val!r}")
    return val


def build_cli_config(raw: dict, seed_override: int | None = None,
                     out_override: str | None = None) -> CliConfig:
    """Merges raw key=value pairs with defaults and validates every section.

    Validation errors from the owning modules are re-raised as ConfigError
    with the section prefixed, so the offending key path is visible.
    """
    raw = dict(raw)
    seed = _take(raw, "seed", int, 0)
    if seed_override is not None:
        seed = seed_override
    n_seeds = _take(raw, "seeds", int, 5)
    if n_seeds < 1:
        raise ConfigError(f"seeds: must be >= 1, got {n_seeds}")
    output_dir = _take(raw, "output_dir", str, "out")
    if out_override is not None:
        output_dir = out_override
    train_count = _take(raw, "train_count", int, 200)
    test_count = _take(raw, "test_count", int, 50)
    if train_count < 1 or test_count < 1:
        raise ConfigError(f"train_count, test_count: must be >= 1, got "
                          f"{train_count}, {test_count}")

    def section(name: str, builder):
        try:
            return builder()
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{name}.{exc}") from None

    synth = section("synth", lambda: SynthConfig(
        width=_take(raw, "synth.width", int, 64),
        height=_take(raw, "synth.height", int, 64),
        target_pos_rate=_take(raw, "synth.target_pos_rate", float, 0.011),
        n_cracks_min=_take(raw, "synth.n_cracks_min", int, 1),
        n_cracks_max=_take(raw, "synth.n_cracks_max", int, 3),
        noise_sigma=_take(raw, "synth.noise_sigma", float, 0.05),
        crack_intensity_delta=_take(raw, "synth.crack_intensity_delta", float, 0.3),
        seed=seed,
    ))
    spec = section("loss", lambda: WeightSpec(
        family=_take(raw, "loss.family", str, "exp"),
        beta=_take(raw, "loss.beta", float, 0.75),
        gamma=_take(raw, "loss.gamma", float, 1.0),
        base=_take(raw, "loss.base", float, 10.0),
        q=_take(raw, "loss.q", float, 1.0),
        count_smoothing=_take(raw, "loss.count_smoothing", float, 1.0),
    ))
    hol = section("holistic", lambda: HolisticConfig(
        a=_take(raw, "holistic.a", float, 1.0),
        b=_take(raw, "holistic.b", float, 0.0),
        lam=_take(raw, "holistic.lambda", float, 1.0),
    ))
    unet = section("unet", lambda: UNetConfig(
        depth=_take(raw, "unet.depth", int, 2),
        base_channels=_take(raw, "unet.base_channels", int, 8),
        input_channels=_take(raw, "unet.input_channels", int, 1),
    ))
    grid_points = _take(raw, "metrics.grid_points", int, 99)
    if grid_points == 99:
        grid = DEFAULT_GRID
    elif 1 <= grid_points <= 999:
        grid = tuple((i + 1) / (grid_points + 1) for i in range(grid_points))
    else:
        raise ConfigError(f"metrics.grid_points: must be in [1, 999], got {grid_points}")
    train = section("train", lambda: TrainConfig(
        spec=spec,
        hol=hol,
        lr=_take(raw, "train.lr", float, 3e-4),
        batch_size=_take(raw, "train.batch_size", int, 2),
        steps_per_epoch=_take(raw, "train.steps_per_epoch", int, 50),
        epochs=_take(raw, "train.epochs", int, 30),
        seed=seed,
        unet=unet,
        eval_grid=grid,
    ))
    betas_raw = _take(raw, "sweep.betas", list, list(DEFAULT_BETAS))
    betas = []
    for i, b in enumerate(betas_raw):
        if isinstance(b, int) and not isinstance(b, bool):
            b = float(b)
        if not isinstance(b, float) or not 0.0 < b <= 1.0:
            raise ConfigError(f"sweep.betas[{i}]: must be a real in (0, 1], got {b!r}")
        betas.append(b)
    train_manifest = _take(raw, "data.train_manifest", str, "")
    test_manifest = _take(raw, "data.test_manifest", str, "")
    if bool(train_manifest) != bool(test_manifest):
        raise ConfigError("data.train_manifest, data.test_manifest: provide both "
                          "or neither")

    # the synth dims must fit the network's downsampling chain
    div = 2 ** unet.depth
    if synth.width % div or synth.height % div:
        raise ConfigError(f"synth.width, synth.height: {synth.width}x{synth.height} "
                          f"not divisible by 2^unet.depth = {div}")

    if raw:
        key = sorted(raw)[0]
        raise ConfigError(f"{key}: unknown configuration key")
    return CliConfig(synth=synth, train=train, train_count=train_count,
                     test_count=test_count, n_seeds=n_seeds, output_dir=output_dir,
                     betas=tuple(betas), train_manifest=train_manifest,
                     test_manifest=test_manifest)

"""Parameter-group Adam optimizer, checkpointing, and the training loop.

Parameter groups hold unconstrained float32 raw values; constraint maps
(logistic for texture and reflectances, softplus for intensities and
shininess, normalization for the light direction) produce the natural-space
ScenePoint the loss consumes, and their exact adjoints pull natural-space
gradients back to raw space. theta and the camera are sampled per step, never
optimized.

Checkpoint container "MMC1": 4-byte magic | uint32-le header length | UTF-8
JSON header (version, step, seed, config text + hash, array table) |
little-endian IEEE-754 32-bit payload arrays at header-declared offsets.
A save/load round trip is bit-exact, which makes resumed runs bit-identical
to uninterrupted ones.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import BodyParams, blend_shape
from .config import (
    RunConfig,
    build_camera_dists,
    build_model,
    build_pose_dist,
    build_raster_config,
    build_reg_weights,
    build_scorer,
    serialize_config,
)
from .geometry import build_topology
from .objective import PromptSpec, ScenePoint, SceneGrads, total_loss
from .raster import Light, Material
from .scorers import ScorerUnreachableError

CKPT_MAGIC = b"MMC1"
CKPT_VERSION = 1
GROUP_NAMES = ("beta", "delta", "texture", "light", "material")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class OptimError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ParamGroup:
    name: str
    values: np.ndarray            # float32 raw (unconstrained) parameters
    lr: float
    enabled: bool = True
    clip_norm: float | None = None


@dataclass
class ParamGroups:
    """The five optimizable groups; raw layouts:

    beta (K,); delta (N, 3); texture (Ht, Wt, 3) logits;
    light (12,) = [direction 3, ambient 3, diffuse 3, specular 3];
    material (10,) = [ambient 3, diffuse 3, specular 3, shininess].
    """

    beta: ParamGroup
    delta: ParamGroup
    texture: ParamGroup
    light: ParamGroup
    material: ParamGroup

    def __iter__(self):
        return iter((self.beta, self.delta, self.texture, self.light, self.material))

    def by_name(self, name: str) -> ParamGroup:
        return getattr(self, name)


@dataclass
class OptState:
    step: int
    seed: int
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fresh(cls, groups: ParamGroups, seed: int) -> "OptState":
        state = cls(step=0, seed=seed)
        for g in groups:
            state.m[g.name] = np.zeros_like(g.values)
            state.v[g.name] = np.zeros_like(g.values)
        return state


# ---------------------------------------------------------------------------
# constraint maps raw <-> natural, with exact adjoints
# ---------------------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(y: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    y = np.clip(np.asarray(y, dtype=np.float64), eps, 1.0 - eps)
    return np.log(y / (1.0 - y))


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def inv_softplus(y: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    y = np.maximum(np.asarray(y, dtype=np.float64), floor)
    return y + np.log(-np.expm1(-y))


_TEXTURE_EPS = 1e-7  # keep texels strictly inside (0,1) despite float rounding


def texture_from_logits(logits: np.ndarray) -> np.ndarray:
    """Logistic map keeping every texel strictly inside (0, 1)."""
    s = sigmoid(np.asarray(logits, dtype=np.float64))
    return np.clip(s, _TEXTURE_EPS, 1.0 - _TEXTURE_EPS)


def texture_logits_vjp(logits: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    t = sigmoid(np.asarray(logits, dtype=np.float64))
    return upstream * t * (1.0 - t)


def init_param_groups(model, cfg: RunConfig) -> ParamGroups:
    lr = cfg.optimizer.learning_rates
    enabled = set(cfg.optimizer.enabled)
    clip = dict(cfg.optimizer.grad_clip)
    ht, wt = cfg.render.texture_resolution

    light_raw = np.concatenate([
        np.asarray(cfg.light.direction, dtype=np.float64),
        inv_softplus(np.asarray(cfg.light.ambient)),
        inv_softplus(np.asarray(cfg.light.diffuse)),
        inv_softplus(np.asarray(cfg.light.specular)),
    ])
    material_raw = np.concatenate([
        logit(np.asarray(cfg.material.ambient)),
        logit(np.asarray(cfg.material.diffuse)),
        logit(np.asarray(cfg.material.specular)),
        inv_softplus(np.asarray([cfg.material.shininess])),
    ])

    def group(name, values, rate):
        return ParamGroup(
            name=name,
            values=np.ascontiguousarray(values, dtype=np.float32),
            lr=rate,
            enabled=name in enabled,
            clip_norm=clip.get(name),
        )

    return ParamGroups(
        beta=group("beta", np.zeros(model.num_shapes), lr.beta),
        delta=group("delta", np.zeros((model.num_vertices, 3)), lr.delta),
        texture=group("texture", np.zeros((ht, wt, 3)), lr.texture),
        light=group("light", light_raw, lr.light),
        material=group("material", material_raw, lr.material),
    )


def build_scene_point(model, groups: ParamGroups) -> ScenePoint:
    lraw = groups.light.values.astype(np.float64)
    direction = lraw[0:3]
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        raise OptimError("light direction parameters collapsed to zero")
    mraw = groups.material.values.astype(np.float64)
    return ScenePoint(
        beta=groups.beta.values.astype(np.float64),
        delta=groups.delta.values.astype(np.float64),
        texture=texture_from_logits(groups.texture.values),
        light=Light(
            direction=direction / norm,
            ambient=softplus(lraw[3:6]),
            diffuse=softplus(lraw[6:9]),
            specular=softplus(lraw[9:12]),
        ),
        material=Material(
            ambient=sigmoid(mraw[0:3]),
            diffuse=sigmoid(mraw[3:6]),
            specular=sigmoid(mraw[6:9]),
            shininess=float(softplus(mraw[9:10])[0]),
        ),
    )


def raw_gradients(groups: ParamGroups, g: SceneGrads) -> dict[str, np.ndarray]:
    """Pull natural-space SceneGrads back through the constraint maps."""
    lraw = groups.light.values.astype(np.float64)
    direction = lraw[0:3]
    norm = np.linalg.norm(direction)
    unit = direction / norm
    d_dir = (g.light_direction - unit * (g.light_direction @ unit)) / norm
    light_grad = np.concatenate([
        d_dir,
        g.light_ambient * sigmoid(lraw[3:6]),
        g.light_diffuse * sigmoid(lraw[6:9]),
        g.light_specular * sigmoid(lraw[9:12]),
    ])
    mraw = groups.material.values.astype(np.float64)

    def dsig(x):
        s = sigmoid(x)
        return s * (1.0 - s)

    material_grad = np.concatenate([
        g.material_ambient * dsig(mraw[0:3]),
        g.material_diffuse * dsig(mraw[3:6]),
        g.material_specular * dsig(mraw[6:9]),
        np.asarray([g.material_shininess]) * sigmoid(mraw[9:10]),
    ])
    return {
        "beta": np.asarray(g.beta, dtype=np.float64),
        "delta": np.asarray(g.delta, dtype=np.float64),
        "texture": texture_logits_vjp(groups.texture.values, g.texture),
        "light": light_grad,
        "material": material_grad,
    }


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_step(
    groups: ParamGroups, grads: dict[str, np.ndarray], state: OptState
) -> tuple[ParamGroups, OptState]:
    """Standard bias-corrected Adam on enabled groups, float32 state.

    Optional per-group global-norm clipping runs before the update. Any NaN
    in an enabled group's gradient aborts the whole step with no partial
    update applied.
    """
    for g in groups:
        if not g.enabled:
            continue
        grad = grads.get(g.name)
        if grad is None:
            raise OptimError(f"missing gradient for enabled group {g.name!r}")
        if not np.all(np.isfinite(grad)):
            raise OptimError(f"non-finite gradient in group {g.name!r}; step aborted")

    t = state.step + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for g in groups:
        if not g.enabled:
            continue
        grad = np.ascontiguousarray(grads[g.name], dtype=np.float32).reshape(g.values.shape)
        if g.clip_norm is not None:
            norm = float(np.linalg.norm(grad.astype(np.float64)))
            if norm > g.clip_norm:
                grad = grad * np.float32(g.clip_norm / norm)
        m = state.m[g.name]
        v = state.v[g.name]
        m *= np.float32(ADAM_BETA1)
        m += np.float32(1.0 - ADAM_BETA1) * grad
        v *= np.float32(ADAM_BETA2)
        v += np.float32(1.0 - ADAM_BETA2) * grad * grad
        m_hat = m / np.float32(bc1)
        v_hat = v / np.float32(bc2)
        g.values -= np.float32(g.lr) * m_hat / (np.sqrt(v_hat) + np.float32(ADAM_EPS))
    state.step = t
    return groups, state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def checkpoint_save(groups: ParamGroups, state: OptState, cfg: RunConfig, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    meta = {}
    for g in groups:
        arrays[f"{g.name}.values"] = g.values
        arrays[f"{g.name}.m"] = state.m[g.name]
        arrays[f"{g.name}.v"] = state.v[g.name]
        meta[g.name] = {"lr": g.lr, "enabled": g.enabled, "clip_norm": g.clip_norm}
    entries = {}
    offset = 0
    for name, arr in arrays.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": arr32.nbytes}
        offset += arr32.nbytes
    header = {
        "magic": "MMC1",
        "version": CKPT_VERSION,
        "step": state.step,
        "seed": state.seed,
        "groups": meta,
        "arrays": entries,
        "config": serialize_config(cfg),
        "config_hash": config_hash(cfg),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def checkpoint_load(path: str | Path) -> tuple[ParamGroups, OptState, RunConfig]:
    """Load a checkpoint; bit-exact inverse of `checkpoint_save`.

    Raises CheckpointError on bad magic, version mismatch, or truncation;
    never returns partial state.
    """
    from .config import parse_config

    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise CheckpointError("truncated checkpoint header")
        (hlen,) = np.frombuffer(raw_len, dtype="<u4")
        blob = fh.read(int(hlen))
        if len(blob) != hlen:
            raise CheckpointError("truncated checkpoint header")
        payload = fh.read()
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")

    arrays = {}
    for name, entry in header["arrays"].items():
        off, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if off + nbytes > len(payload):
            raise CheckpointError(f"truncated checkpoint payload at array {name!r}")
        arrays[name] = (
            np.frombuffer(payload[off : off + nbytes], dtype="<f4")
            .reshape(entry["shape"])
            .copy()
        )

    cfg = parse_config(header["config"])
    if config_hash(cfg) != header["config_hash"]:
        raise CheckpointError("checkpoint config hash mismatch")

    state = OptState(step=int(header["step"]), seed=int(header["seed"]))
    group_objs = {}
    for name in GROUP_NAMES:
        meta = header["groups"][name]
        key = f"{name}.values"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing array {key!r}")
        group_objs[name] = ParamGroup(
            name=name,
            values=arrays[key],
            lr=float(meta["lr"]),
            enabled=bool(meta["enabled"]),
            clip_norm=None if meta["clip_norm"] is None else float(meta["clip_norm"]),
        )
        state.m[name] = arrays[f"{name}.m"]
        state.v[name] = arrays[f"{name}.v"]
    return ParamGroups(**group_objs), state, cfg


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    final_checkpoint: Path
    steps_run: int
    loss_log: Path
    last_losses: list[float] = field(default_factory=list)


def run_optimization(
    cfg: RunConfig,
    resume: str | Path | None = None,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    progress=None,
    max_retries: int = 5,
) -> RunResult:
    """Stochastic training loop: sample batch, total_loss, adam_step.

    Writes a CSV loss log (step,total,<one column per prompt>,reg), snapshot
    renders every output.snapshot_every steps, checkpoints every
    output.checkpoint_every steps plus step 0 and the final step. Fully
    resumable: a resumed run continues bit-identically to an uninterrupted one
    with the same seed. A remote scorer that is unreachable is retried with
    exponential backoff; after `max_retries` the last checkpoint is left
    intact and the error propagates.
    """
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": int(seed)})
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    snap_dir = out / "snapshots"

    model = build_model(cfg)
    model64 = model.astype(np.float64)
    dists = build_camera_dists(cfg)
    pose_dist = build_pose_dist(cfg, model.num_joints)
    scorer = build_scorer(cfg)
    reg_weights = build_reg_weights(cfg)
    raster_cfg = build_raster_config(cfg)
    prompts = [
        PromptSpec(text=p.text, cameras=p.cameras, textured=p.textured, weight=p.weight)
        for p in cfg.prompts
    ]
    topo = build_topology(model.faces, model.num_vertices)

    if resume is not None:
        groups, state, ckpt_cfg = checkpoint_load(resume)
        if config_hash(ckpt_cfg) != config_hash(cfg):
            raise CheckpointError(
                "checkpoint was produced by a different config; refusing to resume"
            )
    else:
        groups = init_param_groups(model, cfg)
        state = OptState.fresh(groups, cfg.seed)
        checkpoint_save(groups, state, cfg, ckpt_dir / f"step_{state.step:06d}.mmc1")

    log_path = out / "loss_log.csv"
    new_log = not log_path.exists() or resume is None
    log_file = open(log_path, "w" if new_log else "a", newline="")
    writer = csv.writer(log_file)
    if new_log:
        writer.writerow(
            ["step", "total"] + [f"prompt_{i}" for i in range(len(prompts))] + ["reg"]
        )

    last_losses: list[float] = []
    try:
        while state.step < cfg.optimizer.max_steps:
            step = state.step
            point = build_scene_point(model64, groups)
            breakdown = None
            for attempt in range(max_retries + 1):
                try:
                    breakdown, scene_grads = total_loss(
                        model64, point, prompts, dists, pose_dist, scorer, reg_weights,
                        batch=cfg.optimizer.batch_views, step=step, seed=state.seed,
                        resolution=tuple(cfg.render.train_resolution),
                        raster_cfg=raster_cfg, pose_pairing=cfg.pose.pairing,
                        topology=topo,
                    )
                    break
                except ScorerUnreachableError:
                    if attempt == max_retries:
                        checkpoint_save(groups, state, cfg, ckpt_dir / "interrupted.mmc1")
                        raise
                    time.sleep(min(0.5 * 2**attempt, 8.0))
            grads = raw_gradients(groups, scene_grads)
            adam_step(groups, grads, state)

            row = [step, f"{breakdown.total:.8f}"]
            row += [f"{v:.8f}" for v in breakdown.per_prompt]
            row += [f"{breakdown.reg:.8f}"]
            writer.writerow(row)
            log_file.flush()
            last_losses = breakdown.per_prompt
            if progress is not None:
                parts = " ".join(
                    f"p{i}={v:.6f}" for i, v in enumerate(breakdown.per_prompt)
                )
                progress(
                    f"step={step} total={breakdown.total:.6f} reg={breakdown.reg:.6f} {parts}"
                )

            if cfg.output.snapshot_every and state.step % cfg.output.snapshot_every == 0:
                _write_snapshots(model64, groups, cfg, dists, prompts, raster_cfg, snap_dir, state)
            if cfg.output.checkpoint_every and state.step % cfg.output.checkpoint_every == 0:
                checkpoint_save(groups, state, cfg, ckpt_dir / f"step_{state.step:06d}.mmc1")
    finally:
        log_file.close()

    final = ckpt_dir / f"step_{state.step:06d}.mmc1"
    checkpoint_save(groups, state, cfg, final)
    checkpoint_save(groups, state, cfg, out / "final.mmc1")
    return RunResult(
        final_checkpoint=out / "final.mmc1",
        steps_run=state.step,
        loss_log=log_path,
        last_losses=last_losses,
    )


def _write_snapshots(model64, groups, cfg, dists, prompts, raster_cfg, snap_dir, state):
    from .export import write_png
    from .body import forward_kinematics, skin
    from .raster import render
    from .sampling import sample_camera, substream

    point = build_scene_point(model64, groups)
    rest = blend_shape(
        model64,
        BodyParams(
            beta=point.beta,
            theta=np.zeros((model64.num_joints, 3)),
            delta=point.delta,
        ),
    )
    mesh = skin(model64, rest, forward_kinematics(model64, rest, np.zeros((model64.num_joints, 3))))
    for i, prompt in enumerate(prompts):
        rng = substream(state.seed, "snapshot", state.step, *prompt.stream_key())
        cam = sample_camera(
            dists[prompt.cameras], model64, rest, rng, tuple(cfg.render.train_resolution)
        )
        img = render(mesh, cam, point.light, point.material, point.texture,
                     raster_cfg, textured=prompt.textured)
        write_png(img, snap_dir / f"step_{state.step:06d}_p{i}.png")

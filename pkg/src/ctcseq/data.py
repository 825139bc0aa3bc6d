"""Synthetic fingerspelling-style clip generation, the on-disk tensor
container and index format, and training-time augmentation.

Each clip renders its target letters as distinct glyph patterns drifting
across the frame, with motion-blurred transition frames between letters.
All randomness derives from (seed, clip_index) so generation is
reproducible and parallelizable per clip.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ctc import Alphabet

CHANNEL_MEAN = np.array([0.485, 0.456, 0.406])
CHANNEL_STD = np.array([0.229, 0.224, 0.225])

TENSOR_MAGIC = b"CTSQTENS"
TENSOR_VERSION = 1

_GLYPH_SEED = 0x67_6C_79
_SIGNER_SEED = 0x73_67_6E


@dataclass(frozen=True)
class GenConfig:
    frame_size: int = 64
    channels: int = 3
    min_letters: int = 2
    max_letters: int = 4
    min_frames_per_letter: int = 2
    max_frames_per_letter: int = 3
    transition_frames: int = 1
    glyph_cells: int = 7
    n_signers: int = 12
    left_handed_rate: float = 0.07
    background_noise: float = 0.02
    position_jitter: float = 1.5
    train_fraction: float = 0.70
    dev_fraction: float = 0.15
    signer_disjoint: bool = True
    words: tuple[str, ...] = ()

    def __post_init__(self):
        if self.min_letters < 1 or self.max_letters < self.min_letters:
            raise ValueError("invalid letters-per-clip range")
        if self.min_frames_per_letter < 2:
            raise ValueError("each letter must be rendered for at least 2 frames")
        if not 0.0 <= self.left_handed_rate <= 1.0:
            raise ValueError("left_handed_rate must be in [0, 1]")
        if not 0.0 < self.train_fraction + self.dev_fraction < 1.0:
            raise ValueError("train/dev fractions must leave room for a test split")


@dataclass
class SyntheticClip:
    frames: np.ndarray  # (T, channels, S, S), values in [0, 1]
    target: tuple[int, ...]
    signer_id: int
    handedness: str  # "left" | "right"

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class DatasetSplit:
    train: list[SyntheticClip]
    dev: list[SyntheticClip]
    test: list[SyntheticClip]
    alphabet: Alphabet
    signer_disjoint: bool = True

    def partitions(self) -> dict[str, list[SyntheticClip]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _glyph(letter_index: int, cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic per-letter pattern and RGB tint."""
    rng = np.random.default_rng([_GLYPH_SEED, letter_index])
    g = cfg.glyph_cells
    pattern = (rng.random((g, g)) < 0.5).astype(np.float64)
    # guarantee some ink so no letter renders as an empty block
    pattern[g // 2, g // 2] = 1.0
    tint = rng.uniform(0.55, 1.0, size=3)
    return pattern, tint


def _signer_profile(seed: int, signer_id: int, cfg: GenConfig) -> dict:
    rng = np.random.default_rng([_SIGNER_SEED, seed, signer_id])
    return {
        "scale": int(rng.integers(5, 8)),
        "contrast": float(rng.uniform(0.75, 1.0)),
        "background": float(rng.uniform(0.05, 0.18)),
        "base_x": float(rng.uniform(0.55, 0.75)),
        "base_y": float(rng.uniform(0.25, 0.55)),
    }


def _paste(canvas: np.ndarray, block: np.ndarray, tint: np.ndarray, x: int, y: int, weight: float) -> None:
    s = canvas.shape[1]
    h, w = block.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, s), min(y + h, s)
    if x0 >= x1 or y0 >= y1:
        return
    sub = block[y0 - y : y1 - y, x0 - x : x1 - x]
    for c in range(canvas.shape[0]):
        canvas[c, y0:y1, x0:x1] += weight * tint[c] * sub


def _render_clip(seed: int, clip_index: int, target: tuple[int, ...], signer_id: int,
                 left_handed: bool, cfg: GenConfig) -> np.ndarray:
    rng = np.random.default_rng([seed, clip_index])
    profile = _signer_profile(seed, signer_id, cfg)
    s = cfg.frame_size
    scale = profile["scale"]

    glyphs = []
    for letter in target:
        pattern, tint = _glyph(letter, cfg)
        block = np.kron(pattern, np.ones((scale, scale)))
        glyphs.append((block, tint))

    # frame schedule: hold each letter, one blurred transition in between
    schedule: list[tuple[int, int | None, float]] = []  # (glyph_a, glyph_b, mix)
    for i in range(len(target)):
        hold = int(rng.integers(cfg.min_frames_per_letter, cfg.max_frames_per_letter + 1))
        schedule.extend((i, None, 0.0) for _ in range(hold))
        if i + 1 < len(target):
            schedule.extend((i, i + 1, 0.5) for _ in range(cfg.transition_frames))

    t_total = len(schedule)
    frames = np.zeros((t_total, cfg.channels, s, s))
    x = profile["base_x"] * s
    y = profile["base_y"] * s
    dx = float(rng.uniform(-cfg.position_jitter, cfg.position_jitter))
    dy = float(rng.uniform(-cfg.position_jitter, cfg.position_jitter))
    for t, (a, b, mix) in enumerate(schedule):
        canvas = frames[t]
        canvas += profile["background"]
        canvas += rng.normal(0.0, cfg.background_noise, size=canvas.shape)
        jx = float(rng.uniform(-1.0, 1.0))
        jy = float(rng.uniform(-1.0, 1.0))
        px, py = int(round(x + jx)), int(round(y + jy))
        block_a, tint_a = glyphs[a]
        if b is None:
            _paste(canvas, block_a, tint_a, px, py, profile["contrast"])
        else:
            block_b, tint_b = glyphs[b]
            step = scale  # transition frames smear across a larger move
            _paste(canvas, block_a, tint_a, px, py, (1.0 - mix) * profile["contrast"])
            _paste(canvas, block_b, tint_b, px + step, py, mix * profile["contrast"])
        x += dx
        y += dy
    np.clip(frames, 0.0, 1.0, out=frames)
    if left_handed:
        frames = frames[:, :, :, ::-1].copy()
    return frames


def _sample_target(rng: np.random.Generator, alphabet: Alphabet, cfg: GenConfig) -> tuple[int, ...]:
    if cfg.words:
        word = cfg.words[int(rng.integers(0, len(cfg.words)))]
        return tuple(alphabet.encode(word))
    k = int(rng.integers(cfg.min_letters, cfg.max_letters + 1))
    return tuple(int(rng.integers(0, len(alphabet.letters))) for _ in range(k))


def synthesize(seed: int, n_clips: int, alphabet: Alphabet, cfg: GenConfig | None = None) -> DatasetSplit:
    """Generate a signer-disjoint train/dev/test split of synthetic clips."""
    cfg = cfg or GenConfig()
    if len(alphabet.letters) < 2:
        raise ValueError("synthesis needs an alphabet of at least 2 letters")

    n_train = int(round(cfg.train_fraction * n_clips))
    n_dev = int(round(cfg.dev_fraction * n_clips))
    n_test = n_clips - n_train - n_dev
    counts = {"train": n_train, "dev": n_dev, "test": max(n_test, 0)}

    # signers are assigned to exactly one partition up front
    signer_ids = list(range(cfg.n_signers))
    s_train = max(1, int(round(cfg.train_fraction * cfg.n_signers)))
    s_dev = max(1, int(round(cfg.dev_fraction * cfg.n_signers)))
    s_dev = min(s_dev, cfg.n_signers - s_train - 1) if cfg.n_signers - s_train > 1 else 1
    partition_signers = {
        "train": signer_ids[:s_train],
        "dev": signer_ids[s_train : s_train + s_dev],
        "test": signer_ids[s_train + s_dev :] or signer_ids[-1:],
    }
    if not cfg.signer_disjoint:
        partition_signers = {name: signer_ids for name in partition_signers}

    partitions: dict[str, list[SyntheticClip]] = {"train": [], "dev": [], "test": []}
    clip_index = 0
    for name in ("train", "dev", "test"):
        for _ in range(counts[name]):
            rng = np.random.default_rng([seed, clip_index, 1])
            signer = partition_signers[name][int(rng.integers(0, len(partition_signers[name])))]
            target = _sample_target(rng, alphabet, cfg)
            left = bool(rng.random() < cfg.left_handed_rate)
            frames = _render_clip(seed, clip_index, target, signer, left, cfg)
            partitions[name].append(
                SyntheticClip(
                    frames=frames,
                    target=target,
                    signer_id=signer,
                    handedness="left" if left else "right",
                )
            )
            clip_index += 1
    return DatasetSplit(
        train=partitions["train"],
        dev=partitions["dev"],
        test=partitions["test"],
        alphabet=alphabet,
        signer_disjoint=cfg.signer_disjoint,
    )


def horizontal_flip(clip: SyntheticClip) -> SyntheticClip:
    """Mirror every frame about the vertical axis; handedness toggles."""
    return SyntheticClip(
        frames=clip.frames[:, :, :, ::-1].copy(),
        target=clip.target,
        signer_id=clip.signer_id,
        handedness="left" if clip.handedness == "right" else "right",
    )


def normalize(frames: np.ndarray) -> np.ndarray:
    """Standard per-channel normalization of 3-channel frames in [0, 1]."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[1] != 3:
        raise ValueError(f"normalization expects 3 channels, got {frames.shape[1]}")
    return (frames - CHANNEL_MEAN[None, :, None, None]) / CHANNEL_STD[None, :, None, None]


# ---------------------------------------------------------------------------
# on-disk formats


def write_tensor(path, arr: np.ndarray) -> None:
    """Binary container: magic, version, dtype tag, shape, LE payload."""
    arr = np.asarray(arr, dtype=np.float64)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", TENSOR_VERSION))
        fh.write(b"f64\x00")
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != TENSOR_MAGIC:
            raise ValueError(f"not a tensor container: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != TENSOR_VERSION:
            raise ValueError(f"unsupported tensor container version {version}")
        if fh.read(4) != b"f64\x00":
            raise ValueError(f"unsupported dtype tag in {path}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        payload = fh.read()
    arr = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return arr.astype(np.float64)


def save_dataset(split: DatasetSplit, out_dir) -> None:
    out = Path(out_dir)
    clips_dir = out / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    (out / "alphabet.txt").write_text("".join(split.alphabet.letters) + "\n", encoding="utf-8")
    for name, clips in split.partitions().items():
        lines = []
        for i, clip in enumerate(clips):
            rel = f"clips/{name}_{i:05d}.tnsr"
            write_tensor(out / rel, clip.frames)
            word = split.alphabet.decode(clip.target)
            lines.append(f"{rel}\t{word}\t{clip.signer_id}\t{clip.handedness}")
        (out / f"{name}.index").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_dataset(data_dir) -> DatasetSplit:
    root = Path(data_dir)
    letters = (root / "alphabet.txt").read_text(encoding="utf-8").strip()
    alphabet = Alphabet(tuple(letters))
    parts: dict[str, list[SyntheticClip]] = {}
    for name in ("train", "dev", "test"):
        clips = []
        index = root / f"{name}.index"
        if index.exists():
            for line in index.read_text(encoding="utf-8").splitlines():
                if not line:
                    continue
                rel, word, signer, handedness = line.split("\t")
                clips.append(
                    SyntheticClip(
                        frames=read_tensor(root / rel),
                        target=tuple(alphabet.encode(word)),
                        signer_id=int(signer),
                        handedness=handedness,
                    )
                )
        parts[name] = clips
    signers = [{c.signer_id for c in parts[n]} for n in ("train", "dev", "test")]
    disjoint = all(
        not (signers[i] & signers[j]) for i in range(3) for j in range(i + 1, 3)
    )
    return DatasetSplit(parts["train"], parts["dev"], parts["test"], alphabet, signer_disjoint=disjoint)

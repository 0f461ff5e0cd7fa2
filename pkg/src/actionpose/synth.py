"""Procedural labelled motion corpus and contrastive pair sampling.

Every clip is produced by forward kinematics over a fixed 17-joint rest
skeleton, so bone lengths are constant by construction. Each action class
drives a handful of joint angles with simple periodic curves; per-clip
variation (amplitude, tempo, phase, heading) comes from the clip seed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .skeleton import (
    PoseSeq2D,
    PoseSeq3D,
    h36m_layout,
    normalize_to_pixels,
    project_orthographic,
    root_center,
    to_camera_frame,
)
from .text import Tokenizer

FPS = 30.0
ACTION_CLASSES = ("walk", "run", "jump", "wave", "kick", "bend", "raise", "throw", "pick", "stand")
TRANSITION = "transition"
PHRASINGS = {
    "walk": ("walk", "walk forward", "walking forward"),
    "run": ("run", "run forward", "jog forward"),
    "jump": ("jump", "jump up", "jump in place"),
    "wave": ("wave", "wave right hand", "wave hand"),
    "kick": ("kick", "kick right leg", "kick forward"),
    "bend": ("bend", "bend down", "bend forward"),
    "raise": ("raise", "raise arms", "raise both arms"),
    "throw": ("throw", "throw ball", "throw with right hand"),
    "pick": ("pick", "pick up", "pick something up"),
    "stand": ("stand", "stand still", "stand idle"),
}
TRANSITION_WORDS = ("transit", "from", "to")

# child offset from parent in the rest pose, millimetres (x lateral, y up)
REST_OFFSETS = np.array([
    [0, 0, 0],
    [-110, 0, 0], [0, -430, 0], [0, -440, 0],
    [110, 0, 0], [0, -430, 0], [0, -440, 0],
    [0, 230, 0], [0, 250, 0], [0, 110, 0], [0, 120, 0],
    [160, -30, 0], [0, -280, 0], [0, -250, 0],
    [-160, -30, 0], [0, -280, 0], [0, -250, 0],
], dtype=np.float64)
STANDING_HEIGHT = 870.0  # pelvis height with straight legs
HEADER = struct.Struct("<III")

# joint indices (Human3.6M order)
PELVIS, R_HIP, R_KNEE, L_HIP, L_KNEE = 0, 1, 2, 4, 5
SPINE, THORAX, NECK = 7, 8, 9
L_SHOULDER, L_ELBOW, R_SHOULDER, R_ELBOW = 11, 12, 14, 15


@dataclass
class LabeledClip:
    motion: PoseSeq3D
    label_text: str
    action_class: str
    seed: int
    clip_id: str = ""

    def __post_init__(self):
        if not self.label_text.strip():
            raise ValueError("label_text must be non-empty")

    @property
    def class_id(self) -> int:
        if self.action_class == TRANSITION:
            return len(ACTION_CLASSES)
        return ACTION_CLASSES.index(self.action_class)


@dataclass
class ContrastiveBatch:
    anchors: list[PoseSeq2D]
    positives: list[list[int]]
    negatives: list[list[list[int]]]
    targets_y: np.ndarray  # (B, K+1)
    positive_index: np.ndarray  # (B,)
    candidates: list[list[list[int]]]  # per anchor, K+1 token sequences in candidate order
    candidate_texts: list[list[str]]
    targets_3d: np.ndarray  # (B, T, J, 3) root-centred, camera frame, millimetres
    clip_ids: list[str]
    views: list[str]
    records: list = field(default_factory=list)


def derive_seed(*parts: int) -> int:
    """Stable 31-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0] >> 1)


def vocabulary_words() -> list[str]:
    words = {w for phr in PHRASINGS.values() for p in phr for w in p.split()}
    return sorted(words | set(TRANSITION_WORDS))


def default_tokenizer() -> Tokenizer:
    return Tokenizer(vocabulary_words())


# -- kinematics --------------------------------------------------------------

def _rot(axis: str, deg: np.ndarray) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    if axis == "x":
        m = [[o, z, z], [z, c, -s], [z, s, c]]
    elif axis == "y":
        m = [[c, z, s], [z, o, z], [-s, z, c]]
    else:
        m = [[c, -s, z], [s, c, z], [z, z, o]]
    return np.moveaxis(np.array(m), (0, 1), (-2, -1))


def forward_kinematics(angles: np.ndarray, root: np.ndarray, offsets: np.ndarray = REST_OFFSETS) -> np.ndarray:
    """Joint positions from local Euler angles.

    ``angles`` is (T, J, 3) in degrees (pitch about x, yaw about y, roll
    about z; local rotation = Ry @ Rx @ Rz); ``root`` is (T, 3). A joint's
    rotation moves the bones of its children.
    """
    parents = h36m_layout().parent_of
    T, J = angles.shape[:2]
    local = _rot("y", angles[..., 1]) @ _rot("x", angles[..., 0]) @ _rot("z", angles[..., 2])
    glob = np.empty((T, J, 3, 3))
    pos = np.empty((T, J, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = root
    for j in range(1, J):
        p = parents[j]
        glob[:, j] = glob[:, p] @ local[:, j]
        pos[:, j] = pos[:, p] + glob[:, p] @ offsets[j]
    return pos


def _class_curves(action: str, t: np.ndarray, rng: np.random.Generator):
    """Joint angles (T, J, 3) in degrees and root path (T, 3) for one class."""
    amp = rng.uniform(0.85, 1.15)
    tempo = rng.uniform(0.9, 1.1)
    phase = rng.uniform(0, 2 * np.pi)
    heading = rng.uniform(-20, 20)

    T = len(t)
    ang = np.zeros((T, 17, 3))
    # arms slightly abducted so they clear the torso
    ang[:, L_SHOULDER, 2] = 8
    ang[:, R_SHOULDER, 2] = -8
    y = np.full(T, STANDING_HEIGHT)
    fwd = np.zeros(T)  # distance travelled along the heading

    def w(freq):
        return 2 * np.pi * freq * tempo * t + phase

    if action in ("walk", "run"):
        run = action == "run"
        ph = w(1.5 if run else 1.0)
        hip, knee, arm = (40, 35, 30) if run else (25, 15, 15)
        ang[:, R_HIP, 0] = hip * amp * np.sin(ph)
        ang[:, L_HIP, 0] = hip * amp * np.sin(ph + np.pi)
        ang[:, R_KNEE, 0] = -knee * amp * (1 + np.sin(ph + np.pi / 2))
        ang[:, L_KNEE, 0] = -knee * amp * (1 + np.sin(ph + 3 * np.pi / 2))
        ang[:, R_SHOULDER, 0] = arm * amp * np.sin(ph + np.pi)
        ang[:, L_SHOULDER, 0] = arm * amp * np.sin(ph)
        ang[:, [R_ELBOW, L_ELBOW], 0] = 80 if run else 10
        ang[:, SPINE, 2] = 5 * np.sin(ph)  # lateral sway
        if run:
            ang[:, SPINE, 0] = 10
        y = y + (30 if run else 15) * np.sin(2 * ph) - (30 if run else 0)
        fwd = (3000 if run else 1200) * tempo * t
    elif action == "jump":
        cyc = np.mod(tempo * t + phase / (2 * np.pi), 1.0)
        crouch = np.where(cyc < 0.3, np.sin(np.pi * cyc / 0.3), 0.0)
        air = np.where((cyc >= 0.3) & (cyc < 0.7), np.sin(np.pi * (cyc - 0.3) / 0.4), 0.0)
        ang[:, [R_HIP, L_HIP], 0] = (40 * crouch)[:, None]
        ang[:, [R_KNEE, L_KNEE], 0] = (-80 * crouch)[:, None]
        ang[:, [R_SHOULDER, L_SHOULDER], 0] = (-30 * crouch + 150 * air)[:, None]
        y = y - 120 * crouch + 250 * amp * air
    elif action == "wave":
        ph = w(1.5)
        ang[:, R_SHOULDER, 2] = -150 * amp
        ang[:, R_ELBOW, 2] = -30 * amp * np.sin(ph)
        ang[:, SPINE, 2] = 3 * np.sin(ph / 3)
    elif action == "kick":
        ph = w(1.0)
        pulse = np.maximum(0.0, np.sin(ph)) ** 2
        ang[:, R_HIP, 0] = 75 * amp * pulse
        ang[:, R_HIP, 2] = -20 * amp * pulse
        ang[:, R_KNEE, 0] = -40 * amp * np.maximum(0.0, np.sin(ph - np.pi / 3))
        ang[:, L_SHOULDER, 0] = 20 * amp * pulse
        ang[:, SPINE, 0] = -10 * pulse
    elif action == "bend":
        # never fully upright, so every short window shows a bent torso
        b = (1 - np.cos(w(0.8))) / 2
        ang[:, SPINE, 0] = (25 + 50 * b) * amp
        ang[:, THORAX, 0] = 15 * b
        ang[:, NECK, 0] = 10 * b
        ang[:, [R_SHOULDER, L_SHOULDER], 0] = (25 * b)[:, None]
    elif action == "raise":
        r = (1 - np.cos(w(0.8))) / 2
        ang[:, [R_SHOULDER, L_SHOULDER], 0] = ((30 + 130 * r) * amp)[:, None]
    elif action == "throw":
        ph = w(0.6)
        ang[:, R_SHOULDER, 0] = 50 * amp + 100 * amp * np.sin(ph)
        ang[:, R_ELBOW, 0] = 60 + 40 * np.cos(ph)
        ang[:, THORAX, 1] = 25 * np.sin(ph)
        ang[:, L_HIP, 0] = 15 * np.sin(ph)
    elif action == "pick":
        b = (1 - np.cos(w(0.35))) / 2
        ang[:, SPINE, 0] = 60 * amp * b
        ang[:, [R_HIP, L_HIP], 0] = (30 * b)[:, None]
        ang[:, [R_KNEE, L_KNEE], 0] = (-60 * b)[:, None]
        ang[:, R_SHOULDER, 0] = 40 * b
        y = y - 250 * b
    elif action == "stand":
        ph = w(0.25)
        ang[:, SPINE, 2] = 3 * np.sin(ph)
        ang[:, L_SHOULDER, 2] += 5 * amp * np.sin(2 * ph)
        ang[:, R_SHOULDER, 2] -= 5 * amp * np.sin(2 * ph)
        ang[:, NECK, 1] = 10 * np.sin(ph)
        y = y + 3 * np.sin(2 * ph)
    else:
        raise ValueError(f"unknown action class {action!r}")

    ang[:, PELVIS, 1] = heading
    h = np.deg2rad(heading)
    # facing the front camera means forward is -z; heading turns about +y
    root = np.stack([-np.sin(h) * fwd, y, -np.cos(h) * fwd], axis=-1)
    return ang, root


def generate_motion(action_class: str, duration_frames: int, seed: int) -> LabeledClip:
    """Deterministic synthetic clip for ``action_class`` at 30 fps."""
    if action_class not in ACTION_CLASSES:
        raise ValueError(f"unknown action class {action_class!r}, expected one of {ACTION_CLASSES}")
    if duration_frames < 16:
        raise ValueError(f"duration_frames must be >= 16, got {duration_frames}")
    rng = np.random.default_rng(seed)
    label = PHRASINGS[action_class][rng.integers(len(PHRASINGS[action_class]))]
    t = np.arange(duration_frames) / FPS
    ang, root = _class_curves(action_class, t, rng)
    return LabeledClip(PoseSeq3D(forward_kinematics(ang, root), fps=FPS), label, action_class, int(seed))


def build_transition_label(label_a: str, label_b: str) -> str:
    if not label_a.strip() or not label_b.strip():
        raise ValueError("transition labels must be non-empty")
    return f"transit from {label_a} to {label_b}"


def make_transition_clip(clip_a: LabeledClip, clip_b: LabeledClip, blend_frames: int) -> LabeledClip:
    """Concatenate two clips with a linear cross-fade of ``blend_frames``.

    The last ``n`` frames of ``a`` are blended with the first ``n`` of ``b``
    using weights alpha_k = (k + 1) / (n + 1) on ``b``; the result has
    T_a + T_b - n frames.
    """
    a, b = clip_a.motion, clip_b.motion
    if a.layout != b.layout:
        raise ValueError("clips have different skeleton layouts")
    n = int(blend_frames)
    if n < 0 or n >= min(a.num_frames, b.num_frames):
        raise ValueError(f"blend_frames must be in [0, {min(a.num_frames, b.num_frames)})")
    alpha = (np.arange(n) + 1.0) / (n + 1.0)
    blend = (1 - alpha)[:, None, None] * a.data[a.num_frames - n:] + alpha[:, None, None] * b.data[:n]
    data = np.concatenate([a.data[: a.num_frames - n], blend, b.data[n:]], axis=0)
    label = build_transition_label(clip_a.label_text, clip_b.label_text)
    return LabeledClip(PoseSeq3D(data, a.layout, a.fps), label, TRANSITION, clip_a.seed)


def generate_corpus(
    histogram: dict[str, int],
    duration_frames: int,
    seed: int,
    n_transitions: int = 0,
    blend_frames: int = 8,
) -> list[LabeledClip]:
    """Clips with exactly ``histogram[c]`` clips of class ``c``.

    Clip ``i`` gets seed ``derive_seed(seed, i)`` so any subset can be
    regenerated independently. Transition clips come last.
    """
    clips = []
    order = [c for c in ACTION_CLASSES if histogram.get(c, 0) > 0]
    unknown = set(histogram) - set(ACTION_CLASSES)
    if unknown:
        raise ValueError(f"unknown action classes {sorted(unknown)}")
    for c in order:
        for _ in range(histogram[c]):
            i = len(clips)
            clip = generate_motion(c, duration_frames, derive_seed(seed, i))
            clip.clip_id = f"c{i:05d}"
            clips.append(clip)
    if n_transitions:
        if len(order) < 2:
            raise ValueError("transition clips need at least two classes")
        rng = np.random.default_rng(derive_seed(seed, 1 << 30))
        for _ in range(n_transitions):
            i = len(clips)
            ca, cb = rng.choice(order, 2, replace=False)
            a = generate_motion(str(ca), duration_frames, derive_seed(seed, i, 0))
            b = generate_motion(str(cb), duration_frames, derive_seed(seed, i, 1))
            clip = make_transition_clip(a, b, blend_frames)
            clip.clip_id = f"c{i:05d}"
            clips.append(clip)
    return clips


def balanced_histogram(classes: Sequence[str], per_class: int) -> dict[str, int]:
    return {c: per_class for c in classes}


# -- serialisation -----------------------------------------------------------

def write_tensor(path: Path, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(HEADER.pack(*arr.shape))
        f.write(arr.tobytes())


def read_tensor(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    shape = HEADER.unpack_from(raw)
    arr = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload size does not match header {shape}")
    return arr.reshape(shape).astype(np.float64)


def write_corpus(directory: str | Path, clips: Sequence[LabeledClip]) -> None:
    directory = Path(directory)
    (directory / "clips").mkdir(parents=True, exist_ok=True)
    lines = []
    for clip in clips:
        if "\t" in clip.label_text or "\n" in clip.label_text:
            raise ValueError(f"label of {clip.clip_id} contains a tab or newline")
        write_tensor(directory / "clips" / f"{clip.clip_id}.bin", clip.motion.data)
        lines.append(f"{clip.clip_id}\t{clip.action_class}\t{clip.label_text}\t{clip.seed}\t{clip.motion.num_frames}\n")
    (directory / "manifest.tsv").write_text("".join(lines))


def read_corpus(directory: str | Path) -> list[LabeledClip]:
    directory = Path(directory)
    manifest = directory / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.tsv in {directory}")
    clips = []
    for line in manifest.read_text().splitlines():
        if not line:
            continue
        clip_id, cls, label, seed, duration = line.split("\t")
        data = read_tensor(directory / "clips" / f"{clip_id}.bin")
        if data.shape[0] != int(duration):
            raise ValueError(f"{clip_id}: manifest duration {duration} != tensor frames {data.shape[0]}")
        clips.append(LabeledClip(PoseSeq3D(data, fps=FPS), label, cls, int(seed), clip_id))
    return clips


def class_histogram(clips: Sequence[LabeledClip]) -> dict[str, int]:
    hist: dict[str, int] = {}
    for c in clips:
        hist[c.action_class] = hist.get(c.action_class, 0) + 1
    return hist


# -- contrastive sampling ----------------------------------------------------

def label_pool(corpus: Sequence[LabeledClip]) -> dict[str, list[str]]:
    """Distinct label texts per class: corpus labels plus every templated
    phrasing of each base class present."""
    pool: dict[str, set[str]] = {}
    for clip in corpus:
        texts = pool.setdefault(clip.action_class, set())
        texts.add(clip.label_text)
        texts.update(PHRASINGS.get(clip.action_class, ()))
    return {c: sorted(t) for c, t in pool.items()}


def prepare_view(clip: LabeledClip, view: str, start: int, length: int) -> tuple[PoseSeq2D, np.ndarray]:
    """Normalised 2D input and root-centred camera-frame 3D target for a window."""
    seq = PoseSeq3D(clip.motion.data[start:start + length], clip.motion.layout, clip.motion.fps)
    x2d = normalize_to_pixels(project_orthographic(seq, view))
    target = root_center(to_camera_frame(seq, view)).data
    return x2d, target


def sample_contrastive_batch(
    corpus: Sequence[LabeledClip],
    batch_size: int,
    K: int,
    seed: int,
    *,
    tokenizer: Tokenizer | None = None,
    seq_len: int | None = None,
    epsilon: float = 0.0,
    corrupt: Callable[[PoseSeq2D, int], tuple[PoseSeq2D, object]] | None = None,
) -> ContrastiveBatch:
    """One positive and ``K`` negatives per anchor.

    Anchors are (clip, view) pairs drawn without replacement while the batch
    fits; both orthographic views count as separate samples. Negatives are
    drawn uniformly without replacement from the label texts of other
    classes and the positive is placed at a random candidate slot.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    tokenizer = tokenizer or default_tokenizer()
    rng = np.random.default_rng(seed)
    pool = label_pool(corpus)
    min_len = min(c.motion.num_frames for c in corpus)
    seq_len = seq_len or min_len
    if seq_len > min_len:
        raise ValueError(f"seq_len {seq_len} exceeds the shortest clip ({min_len} frames)")

    n_samples = 2 * len(corpus)
    picks = rng.choice(n_samples, batch_size, replace=batch_size > n_samples)
    anchors, targets, candidates, texts, records = [], [], [], [], []
    pos_idx = np.empty(batch_size, dtype=np.int64)
    clip_ids, views = [], []
    for b, s in enumerate(picks):
        clip = corpus[int(s) // 2]
        view = ("front", "side")[int(s) % 2]
        start = int(rng.integers(0, clip.motion.num_frames - seq_len + 1))
        x2d, target = prepare_view(clip, view, start, seq_len)
        if corrupt is not None:
            x2d, rec = corrupt(x2d, int(rng.integers(2**31)))
            records.append(rec)
        others = sorted(t for c, ts in pool.items() if c != clip.action_class for t in ts if t != clip.label_text)
        if len(others) < K:
            raise ValueError(f"only {len(others)} negative labels available for class {clip.action_class!r}, need K={K}")
        neg = [others[i] for i in rng.choice(len(others), K, replace=False)]
        p = int(rng.integers(K + 1))
        cand = neg[:p] + [clip.label_text] + neg[p:]
        pos_idx[b] = p
        anchors.append(x2d)
        targets.append(target)
        texts.append(cand)
        candidates.append([tokenizer.encode(t) for t in cand])
        clip_ids.append(clip.clip_id)
        views.append(view)

    y = np.full((batch_size, K + 1), epsilon / K)
    y[np.arange(batch_size), pos_idx] = 1.0 - epsilon
    return ContrastiveBatch(
        anchors=anchors,
        positives=[candidates[b][pos_idx[b]] for b in range(batch_size)],
        negatives=[[c for i, c in enumerate(candidates[b]) if i != pos_idx[b]] for b in range(batch_size)],
        targets_y=y,
        positive_index=pos_idx,
        candidates=candidates,
        candidate_texts=texts,
        targets_3d=np.stack(targets),
        clip_ids=clip_ids,
        views=views,
        records=records,
    )

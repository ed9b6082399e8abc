"""Procedural synthetic-face dataset with exact attribute masks.

Faces are rasterized from per-identity geometry/color parameters plus
per-sample jitter; binary attributes toggle local glyphs (glasses,
mouth_open) and global style (elderly, male).  Because the geometry is
known, each local attribute gets an exact pixel mask (dilated by a fixed
margin).  Images round-trip losslessly through binary PPM at 8 bits.
"""

import os
from dataclasses import dataclass, field

import numpy as np

ATTRIBUTES = ("glasses", "mouth_open", "elderly", "male")
LOCAL_ATTRIBUTES = ("glasses", "mouth_open")
SUPPORTED_SIZES = (16, 32, 64, 128)
DEFAULT_MARGINALS = {"glasses": 0.5, "mouth_open": 0.5, "elderly": 0.3, "male": 0.5}


# ---------------------------------------------------------------------------
# PPM codec (binary P6, maxval 255)

def encode_image(path, img):
    """Write a (3,H,W) or (1,H,W) float image in [0,1] as binary PPM."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3,H,W) image, got {arr.shape}")
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape[1], q.shape[2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(q.transpose(1, 2, 0).tobytes())


def decode_image(path):
    """Read a binary PPM into a (3,H,W) float32 image in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    raw = data[pos:pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32)) / 255.0


def save_mosaic(path, columns, gap=2):
    """Write image columns side by side as one PPM grid.

    columns: sequence of (N,3,S,S) arrays, e.g. inputs, transfers,
    enhanced outputs.  Row i of the grid shows sample i across stages.
    """
    cols = [np.asarray(c) for c in columns]
    if not cols or any(c.ndim != 4 for c in cols):
        raise ValueError("expected a sequence of (N,3,S,S) arrays")
    n = cols[0].shape[0]
    if any(c.shape != cols[0].shape for c in cols):
        raise ValueError("all mosaic columns must have the same shape")
    s = cols[0].shape[-1]
    h = n * s + (n - 1) * gap
    w = len(cols) * s + (len(cols) - 1) * gap
    grid = np.ones((3, h, w), dtype=np.float32)
    for j, col in enumerate(cols):
        for i in range(n):
            y, x = i * (s + gap), j * (s + gap)
            grid[:, y:y + s, x:x + s] = col[i]
    encode_image(path, grid)


# ---------------------------------------------------------------------------
# rasterization helpers

def _grid(s):
    y, x = np.mgrid[0:s, 0:s]
    return x.astype(np.float32), y.astype(np.float32)


def _blend(img, alpha, color):
    img *= (1.0 - alpha)
    img += alpha * np.asarray(color, dtype=np.float32).reshape(3, 1, 1)


def _ellipse_alpha(x, y, cx, cy, rx, ry, edge=1.0):
    d = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    return np.clip((1.0 - d) * max(rx, ry) / edge, 0.0, 1.0)[None]


def identity_params(seed, identity_id):
    """Stable geometry/color parameters for one identity."""
    rng = np.random.default_rng([seed, 7791, identity_id])
    return {
        "skin": np.array([0.55 + 0.35 * rng.random(),
                          0.35 + 0.35 * rng.random(),
                          0.25 + 0.30 * rng.random()], dtype=np.float32),
        "hair": rng.random(3).astype(np.float32) * 0.6,
        "background": (0.1 + 0.8 * rng.random(3)).astype(np.float32),
        "face_rx": 0.28 + 0.08 * rng.random(),
        "face_ry": 0.36 + 0.08 * rng.random(),
        "eye_dx": 0.11 + 0.06 * rng.random(),
        "eye_r": 0.035 + 0.02 * rng.random(),
        "mouth_w": 0.10 + 0.06 * rng.random(),
        "hair_top": 0.26 + 0.06 * rng.random(),
    }


def _mask_dilation(s):
    return max(1, round(2 * s / 32))


def render_sample(params, jitter, attrs, s):
    """Rasterize one face; returns (image (3,s,s), masks {attr: (1,s,s)})."""
    x, y = _grid(s)
    img = np.empty((3, s, s), dtype=np.float32)
    img[:] = params["background"].reshape(3, 1, 1)

    cx = (0.5 + jitter["dx"]) * s
    cy = (0.56 + jitter["dy"]) * s
    rx = params["face_rx"] * s
    ry = params["face_ry"] * s

    # jaw widening for the male attribute
    rx_eff = rx * (1.0 + (0.28 if attrs["male"] else 0.0) * np.clip((y - cy) / ry, 0.0, 1.0))
    d = np.sqrt(((x - cx) / rx_eff) ** 2 + ((y - cy) / ry) ** 2)
    face = np.clip((1.0 - d) * max(np.max(rx_eff), ry) / 1.0, 0.0, 1.0)[None]
    skin = params["skin"] * jitter["brightness"]
    _blend(img, face, np.clip(skin, 0.0, 1.0))

    # hair band across the top of the face
    hair_region = face * (y < (cy - params["hair_top"] * s))[None]
    _blend(img, hair_region, params["hair"])

    # eyes
    eye_y = cy - 0.14 * s
    eye_dx = params["eye_dx"] * s
    eye_r = params["eye_r"] * s
    for ex in (cx - eye_dx, cx + eye_dx):
        _blend(img, _ellipse_alpha(x, y, ex, eye_y, 1.6 * eye_r, eye_r), (0.95, 0.95, 0.95))
        _blend(img, _ellipse_alpha(x, y, ex, eye_y, 0.6 * eye_r, 0.6 * eye_r), (0.05, 0.05, 0.1))

    # nose
    _blend(img, _ellipse_alpha(x, y, cx, cy + 0.04 * s, 0.03 * s, 0.08 * s),
           np.clip(skin * 0.8, 0.0, 1.0))

    # mouth: filled dark ellipse when open, thin line otherwise
    mouth_y = cy + 0.22 * s
    mouth_w = params["mouth_w"] * s
    open_h = 0.05 * s
    if attrs["mouth_open"]:
        _blend(img, _ellipse_alpha(x, y, cx, mouth_y, mouth_w, open_h), (0.25, 0.05, 0.08))
    else:
        _blend(img, _ellipse_alpha(x, y, cx, mouth_y, mouth_w, max(0.012 * s, 0.6)),
               (0.45, 0.15, 0.18))

    # elderly: desaturate the face region and add forehead wrinkle strokes
    if attrs["elderly"]:
        gray = img.mean(axis=0, keepdims=True)
        w_face = 0.5 * face
        img = img * (1.0 - w_face) + gray * w_face
        for k in (0.30, 0.36):
            wy = cy - k * s
            stroke = np.clip(1.0 - np.abs(y - wy), 0.0, 1.0)[None] * face * \
                (np.abs(x - cx) < 0.6 * rx)[None]
            _blend(img, 0.5 * stroke, (0.25, 0.18, 0.15))

    # glasses: dark frames around both eyes plus a bridge
    fw = max(1.0, 0.03 * s)  # frame thickness
    gx0, gx1 = cx - eye_dx - 2.2 * eye_r, cx + eye_dx + 2.2 * eye_r
    gy0, gy1 = eye_y - 1.8 * eye_r, eye_y + 1.8 * eye_r
    if attrs["glasses"]:
        for ex in (cx - eye_dx, cx + eye_dx):
            outer = ((np.abs(x - ex) < 2.2 * eye_r) & (np.abs(y - eye_y) < 1.8 * eye_r))
            inner = ((np.abs(x - ex) < 2.2 * eye_r - fw) & (np.abs(y - eye_y) < 1.8 * eye_r - fw))
            _blend(img, (outer & ~inner)[None].astype(np.float32), (0.08, 0.08, 0.1))
        bridge = ((np.abs(y - eye_y) < 0.5 * fw) & (np.abs(x - cx) < eye_dx))
        _blend(img, bridge[None].astype(np.float32), (0.08, 0.08, 0.1))

    img = np.clip(img, 0.0, 1.0)

    # masks for the local attributes, dilated by a fixed margin
    margin = _mask_dilation(s)
    masks = {}
    gmask = ((x >= gx0 - margin) & (x <= gx1 + margin) &
             (y >= gy0 - margin) & (y <= gy1 + margin))
    masks["glasses"] = gmask[None].astype(np.float32)
    mmask = ((np.abs(x - cx) <= mouth_w + margin) &
             (np.abs(y - mouth_y) <= open_h + margin))
    masks["mouth_open"] = mmask[None].astype(np.float32)
    return img, masks


@dataclass
class SyntheticFaceSample:
    image: np.ndarray
    attributes: dict
    identity_id: int
    masks: dict
    provenance: np.ndarray


def make_sample(seed, index, s, n_identities, marginals=None):
    """Deterministic sample for (seed, index); attribute draws come last so
    flipping an attribute never perturbs geometry or jitter."""
    marginals = dict(DEFAULT_MARGINALS, **(marginals or {}))
    rng = np.random.default_rng([seed, index])
    identity_id = int(rng.integers(0, n_identities))
    jitter = {
        "dx": float(rng.uniform(-0.02, 0.02)),
        "dy": float(rng.uniform(-0.02, 0.02)),
        "brightness": float(rng.uniform(0.92, 1.08)),
    }
    attrs = {a: bool(rng.random() < marginals[a]) for a in ATTRIBUTES}
    params = identity_params(seed, identity_id)
    img, masks = render_sample(params, jitter, attrs, s)
    prov = np.array([identity_id, jitter["dx"], jitter["dy"], jitter["brightness"]]
                    + [float(attrs[a]) for a in ATTRIBUTES], dtype=np.float32)
    return SyntheticFaceSample(img, attrs, identity_id, masks, prov)


# ---------------------------------------------------------------------------
# dataset manifests

@dataclass
class DatasetManifest:
    root: str
    seed: int
    count: int
    size: int
    n_identities: int
    marginals: dict
    rows: list = field(default_factory=list)
    # row: dict(index, identity, <attr>: bool..., image, mask_<local attr>)

    def image(self, i):
        return decode_image(os.path.join(self.root, self.rows[i]["image"]))

    def mask(self, i, attr):
        m = decode_image(os.path.join(self.root, self.rows[i][f"mask_{attr}"]))
        return m[:1]

    def attribute_counts(self):
        return {a: sum(1 for r in self.rows if r[a]) for a in ATTRIBUTES}

    def save(self):
        path = os.path.join(self.root, "manifest.tsv")
        cols = ["index", "identity", *ATTRIBUTES, "image",
                *[f"mask_{a}" for a in LOCAL_ATTRIBUTES]]
        lines = [
            f"# seed\t{self.seed}",
            f"# count\t{self.count}",
            f"# size\t{self.size}",
            f"# n_identities\t{self.n_identities}",
            "# marginals\t" + ",".join(f"{a}={self.marginals[a]:g}" for a in ATTRIBUTES),
            "\t".join(cols),
        ]
        for r in self.rows:
            vals = [str(r["index"]), str(r["identity"])]
            vals += ["1" if r[a] else "0" for a in ATTRIBUTES]
            vals.append(r["image"])
            vals += [r[f"mask_{a}"] for a in LOCAL_ATTRIBUTES]
            lines.append("\t".join(vals))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, root):
        path = os.path.join(root, "manifest.tsv")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no manifest.tsv under {root}")
        meta = {}
        rows = []
        header = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("# "):
                    key, val = line[2:].split("\t", 1)
                    meta[key] = val
                    continue
                parts = line.split("\t")
                if header is None:
                    header = parts
                    continue
                row = dict(zip(header, parts))
                row["index"] = int(row["index"])
                row["identity"] = int(row["identity"])
                for a in ATTRIBUTES:
                    row[a] = row[a] == "1"
                rows.append(row)
        marginals = dict(p.split("=") for p in meta["marginals"].split(","))
        marginals = {k: float(v) for k, v in marginals.items()}
        return cls(root=root, seed=int(meta["seed"]), count=int(meta["count"]),
                   size=int(meta["size"]), n_identities=int(meta["n_identities"]),
                   marginals=marginals, rows=rows)


def generate_dataset(root, seed, n, s=32, n_identities=64, marginals=None):
    """Generate n samples under root; deterministic in (seed, index)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if s not in SUPPORTED_SIZES:
        raise ValueError(f"unsupported image size {s}; choose from {SUPPORTED_SIZES}")
    marginals = dict(DEFAULT_MARGINALS, **(marginals or {}))
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    for a in LOCAL_ATTRIBUTES:
        os.makedirs(os.path.join(root, "masks", a), exist_ok=True)
    manifest = DatasetManifest(root=root, seed=seed, count=n, size=s,
                               n_identities=n_identities, marginals=marginals)
    for i in range(n):
        sample = make_sample(seed, i, s, n_identities, marginals)
        rel_img = f"images/{i:06d}.ppm"
        encode_image(os.path.join(root, rel_img), sample.image)
        row = {"index": i, "identity": sample.identity_id, "image": rel_img}
        row.update(sample.attributes)
        for a in LOCAL_ATTRIBUTES:
            rel_mask = f"masks/{a}/{i:06d}.ppm"
            encode_image(os.path.join(root, rel_mask), sample.masks[a])
            row[f"mask_{a}"] = rel_mask
        manifest.rows.append(row)
    manifest.save()
    return manifest


def split_guided_and_input(manifest, attribute, target=True, input_size=2000, seed=0):
    """Guided set = rows where `attribute` equals `target`; input set = the
    rest, subsampled to input_size (deterministic under seed)."""
    if attribute not in ATTRIBUTES:
        raise ValueError(f"unknown attribute {attribute!r}")
    guided = [r for r in manifest.rows if r[attribute] == bool(target)]
    inputs = [r for r in manifest.rows if r[attribute] != bool(target)]
    if not inputs:
        import warnings
        warnings.warn(f"attribute {attribute!r} is {target} on every sample; "
                      "input set is empty")
    if input_size and len(inputs) > input_size:
        rng = np.random.default_rng([seed, 1201])
        keep = rng.choice(len(inputs), size=input_size, replace=False)
        inputs = [inputs[int(i)] for i in np.sort(keep)]
    return guided, inputs


def split_train_heldout(rows, heldout_fraction=0.2):
    """Deterministic sample-level split: every k-th row is held out."""
    if not 0 < heldout_fraction < 1:
        raise ValueError("heldout_fraction must be in (0,1)")
    k = round(1.0 / heldout_fraction)
    train = [r for i, r in enumerate(rows) if i % k != k - 1]
    heldout = [r for i, r in enumerate(rows) if i % k == k - 1]
    return train, heldout

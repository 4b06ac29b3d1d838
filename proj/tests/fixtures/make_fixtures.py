#!/usr/bin/env python3
"""Writes the AlphaPose fixture videos, their manifest, and expected.json.

expected.json is computed here, independently of the C++ ingest code:
natural frame ordering, max-score person selection (first wins ties),
round-half-up index sampling, and the shared-bbox normalization.
"""
import json
import math
import os
import random
import re
from fractions import Fraction

HERE = os.path.dirname(os.path.abspath(__file__))
POSE_DIR = os.path.join(HERE, "alphapose")
TAU = 0.05
MARGIN = 0.05

BASE = [(128, 40), (134, 34), (122, 34), (142, 38), (114, 38), (152, 70), (104, 70),
        (160, 105), (96, 105), (164, 138), (92, 138), (142, 140), (114, 140),
        (144, 185), (112, 185), (146, 228), (110, 228)]


def person(rng, dx=0.0, dy=0.0, conf=None):
    kps = []
    for j, (x, y) in enumerate(BASE):
        c = conf[j] if conf is not None else round(rng.uniform(0.5, 1.0), 3)
        kps += [round(x + dx + rng.uniform(-3, 3), 3), round(y + dy + rng.uniform(-3, 3), 3), c]
    return kps


def det(image_id, kps, score):
    return {"image_id": image_id, "category_id": 1, "keypoints": kps, "score": score}


def build():
    rng = random.Random(7)
    videos = {}

    # 12 frames; ids sort naturally (frame_10 after frame_9), file order shuffled.
    v = [det(f"frame_{i}.jpg", person(rng, dy=-4 * math.sin(i)), round(rng.uniform(1, 3), 3))
         for i in range(1, 13)]
    rng.shuffle(v)
    videos["v1_wave"] = v

    # 3 frames, padded to 10; the middle frame has two people, the second scores higher.
    v = [det("0.jpg", person(rng), 2.1),
         det("1.jpg", person(rng, dx=-60), 0.6),
         det("1.jpg", person(rng, dy=-20), 1.8),
         det("2.jpg", person(rng, dy=-35), 2.4)]
    videos["v2_jump"] = v

    # 10 frames; frame 4 has three people with scores [0.3, 0.9, 0.5], frame 7 a tie.
    v = []
    for i in range(10):
        if i == 4:
            v += [det("img4", person(rng, dx=70), 0.3), det("img4", person(rng), 0.9),
                  det("img4", person(rng, dx=-70), 0.5)]
        elif i == 7:
            v += [det("img7", person(rng, dx=5), 1.5), det("img7", person(rng, dx=-90), 1.5)]
        else:
            v.append(det(f"img{i}", person(rng, dx=3 * i), round(rng.uniform(1, 3), 3)))
    videos["v3_clap"] = v

    # 19 frames with some joints under the confidence threshold.
    v = []
    for i in range(19):
        conf = [round(rng.uniform(0.5, 1.0), 3) for _ in range(17)]
        conf[(i * 5) % 17] = 0.01
        conf[(i * 3 + 1) % 17] = 0.049
        v.append(det(f"{i:03d}.png", person(rng, dy=8 * (1 - math.cos(i / 3)), conf=conf), 2.0))
    videos["v4_squat"] = v

    # Every joint below threshold: skipped as "no valid joints".
    videos["v5_idle"] = [det(f"f{i}", person(rng, conf=[0.0] * 17), 1.0) for i in range(6)]

    return videos


MANIFEST = [
    ("v1_wave", "v1_wave.json", "Waving_Hello"),
    ("v2_jump", "v2_jump.json", '"Jumping, Jacks"'),
    ("v3_clap", "v3_clap.json", "clapping"),
    ("v4_squat", "v4_squat.json", "  SQUAT   down "),
    ("v5_idle", "v5_idle.json", "standing still"),
]


def natural_key(s):
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.findall(r"\d+|\D+", s) if t]


def canonical(label):
    out = re.sub(r"[\s_\-]+", " ", label.lower())
    out = re.sub(r"[^a-z0-9 ]", "", out)
    return re.sub(r" +", " ", out).strip()


def expected_for(video_id, dets):
    groups = {}
    for i, d in enumerate(dets):
        groups.setdefault(d["image_id"], []).append((i, d))
    frames, chosen = [], []
    for image_id in sorted(groups, key=natural_key):
        best = max(groups[image_id], key=lambda p: (p[1]["score"], -p[0]))
        frames.append(best[1]["keypoints"])
        chosen.append(best[0])
    n = len(frames)
    if n >= 10:
        idx = [math.floor(Fraction(i * (n - 1), 9) + Fraction(1, 2)) for i in range(10)]
    else:
        idx = list(range(n)) + [n - 1] * (10 - n)
    seq = [frames[k] for k in idx]

    valid = [(f[3 * j], f[3 * j + 1]) for f in seq for j in range(17) if f[3 * j + 2] >= TAU]
    if not valid:
        return None, idx, [chosen[k] for k in idx]
    xs, ys = [p[0] for p in valid], [p[1] for p in valid]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    if x1 - x0 <= 0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 <= 0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    m = MARGIN * max(x1 - x0, y1 - y0)
    x0, x1, y0, y1 = x0 - m, x1 + m, y0 - m, y1 + m
    norm, missing = [], []
    for f in seq:
        nf, mf = [], []
        for j in range(17):
            x, y, c = f[3 * j:3 * j + 3]
            if c >= TAU:
                nf.append([min(1, max(0, (x - x0) / (x1 - x0))), min(1, max(0, (y - y0) / (y1 - y0)))])
                mf.append(False)
            else:
                nf.append([0, 0])
                mf.append(True)
        norm.append(nf)
        missing.append(mf)
    return {"frames": [[f[3 * j:3 * j + 3] for j in range(17)] for f in seq],
            "normalized": norm, "missing": missing}, idx, [chosen[k] for k in idx]


def main():
    os.makedirs(POSE_DIR, exist_ok=True)
    videos = build()
    for vid, dets in videos.items():
        with open(os.path.join(POSE_DIR, vid + ".json"), "w") as f:
            json.dump(dets, f)
    with open(os.path.join(HERE, "manifest.csv"), "w") as f:
        f.write("video_id,pose_file,label\n")
        for vid, path, label in MANIFEST:
            f.write(f"{vid},{path},{label}\n")

    expected = {"sequences": [], "skipped": [], "selections": {}}
    for row, (vid, _, label) in enumerate(MANIFEST, start=1):
        seq, idx, chosen = expected_for(vid, videos[vid])
        expected["selections"][vid] = {"sampled_frames": idx, "detection_index": chosen}
        if seq is None:
            expected["skipped"].append({"row": row, "video_id": vid, "reason": "no valid joints"})
            continue
        seq.update({"video_id": vid, "label": canonical(label.strip('"'))})
        expected["sequences"].append(seq)
    kp = sum(not m for s in expected["sequences"] for fr in s["missing"] for m in fr)
    labels = {s["label"] for s in expected["sequences"]}
    expected["summary"] = f"videos={len(expected['sequences'])} actions={len(labels)} keypoints={kp}"
    with open(os.path.join(HERE, "expected.json"), "w") as f:
        json.dump(expected, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Regenerates the dataset conformance fixtures.

Written against the documented byte layout with `struct` only, so the
C++ encoder is checked against an independent writer.
"""
import json
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
SPLITS = {"train": 0, "val": 1, "test": 2}

SMALL = [
    {"id": "m-001", "label": 0, "split": "train",
     "img": [0.5, -1.25, 0.1, 3.0], "txt": [1.0, 0.0, -0.333]},
    {"id": "m-002", "label": 1, "split": "val",
     "img": [2.0, 2.5, -0.75, 1e-3], "txt": [0.25, -4.0, 7.5]},
    {"id": "m-003", "label": 1, "split": "test",
     "img": [-0.0, 0.2, 0.3, 0.4], "txt": [9.0, -9.0, 0.125]},
]


def header(count, img_dim, txt_dim, magic=b"MBE2", version=1):
    return magic + struct.pack("<IIII", version, count, img_dim, txt_dim)


def record(rec, img_len=None, txt_len=None):
    rid = rec["id"].encode()
    out = struct.pack("<H", len(rid)) + rid
    out += struct.pack("<BB", rec["label"], SPLITS[rec["split"]])
    img = rec["img"][: img_len or len(rec["img"])]
    txt = rec["txt"][: txt_len or len(rec["txt"])]
    out += struct.pack("<%df" % len(img), *img)
    out += struct.pack("<%df" % len(txt), *txt)
    return out


def main():
    with open(HERE / "small.jsonl", "w") as f:
        for rec in SMALL:
            f.write(json.dumps(rec) + "\n")

    body = b"".join(record(r) for r in SMALL)
    good = header(len(SMALL), 4, 3) + body
    (HERE / "small.mbe2").write_bytes(good)

    # cut inside the second record's image vector
    cut = len(header(3, 4, 3)) + len(record(SMALL[0])) + 2 + 5 + 2 + 6
    (HERE / "truncated.mbe2").write_bytes(good[:cut])
    (HERE / "bad_magic.mbe2").write_bytes(b"MBE1" + good[4:])
    (HERE / "bad_version.mbe2").write_bytes(header(3, 4, 3, version=9) + body)

    # full-size widths with the second record's text vector one float short
    wide = []
    for i, rec in enumerate(SMALL):
        img = [((i * 31 + k) % 97) / 97.0 for k in range(1408)]
        txt = [((i * 17 + k) % 89) / 89.0 for k in range(768)]
        wide.append(dict(rec, img=img, txt=txt))
    data = header(3, 1408, 768)
    data += record(wide[0]) + record(wide[1], txt_len=767) + record(wide[2])
    (HERE / "narrow_text.mbe2").write_bytes(data)


if __name__ == "__main__":
    main()

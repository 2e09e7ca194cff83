"""Regenerates the synthetic Study-1 fixture: placeholder stimulus images,
the preference matrix and the manifest.

Scores are constructed so that each stimulus has a clear top-3; they are not
measured data.
"""
import csv
import json
import os

from PIL import Image, ImageDraw

HERE = os.path.dirname(os.path.abspath(__file__))

RESPONSES = ["wave hand", "thumb up", "clap hands", "shake hand", "thumb down", "raise hand",
             "point finger", "fist bump", "high five", "hug", "OK", "pat"]
EXTRA = "cheers"

# stimulus -> (top-3 replies, extra responses offered)
STIMULI = [
    ("wave hand", ["wave hand", "raise hand", "OK"], []),
    ("shake hand", ["shake hand", "wave hand", "hug"], []),
    ("raise hand", ["high five", EXTRA, "raise hand"], [EXTRA]),
    ("thumb up", ["thumb up", "OK", "clap hands"], []),
    ("clap hands", ["clap hands", "thumb up", "high five"], []),
    ("fist bump", ["fist bump", "high five", "thumb up"], []),
    ("hug", ["hug", "pat", "shake hand"], []),
    ("point finger", ["raise hand", "point finger", "wave hand"], []),
    ("thumb down", ["pat", "hug", "thumb down"], []),
    ("OK", ["OK", "thumb up", "clap hands"], []),
    ("high five", ["high five", "clap hands", "fist bump"], []),
]

TOP_SCORES = [66, 52, 45]


def scores_for(index, top3, extras):
    row = {}
    filler = [40 - ((index * 7 + k * 3) % 25) for k in range(len(RESPONSES) + 1)]
    for k, r in enumerate(RESPONSES + [EXTRA]):
        if r == EXTRA and EXTRA not in extras:
            row[r] = ""
        else:
            row[r] = filler[k]
    for r, s in zip(top3, TOP_SCORES):
        row[r] = s
    return row


def image_for(index):
    hue = [(200, 80, 60), (60, 160, 90), (70, 90, 200), (190, 170, 60), (150, 70, 170), (60, 170, 170),
           (210, 120, 40), (110, 110, 110), (40, 60, 90), (230, 200, 190), (120, 200, 60)][index]
    img = Image.new("RGB", (64, 64), tuple(c * 2 // 5 for c in hue))
    d = ImageDraw.Draw(img)
    # A crude figure: head, torso and an arm whose angle encodes the stimulus.
    d.ellipse((26, 6, 38, 18), fill=(100, 88, 76))
    d.rectangle((27, 20, 37, 44), fill=(30, 30, 30))
    d.line((37, 24, 37 + 14, 24 - (index - 5) * 2), fill=(100, 88, 76), width=3)
    d.rectangle((2 + index * 5, 56, 6 + index * 5, 60), fill=(0, 0, 0))
    return img


def main():
    with open(os.path.join(HERE, "preferences.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["stimulus"] + RESPONSES + [EXTRA])
        for i, (label, top3, extras) in enumerate(STIMULI):
            row = scores_for(i, top3, extras)
            w.writerow([label] + [row[r] for r in RESPONSES + [EXTRA]])
    manifest = []
    for i, (label, _, extras) in enumerate(STIMULI):
        name = "images/stimulus_%02d.png" % (i + 1)
        image_for(i).save(os.path.join(HERE, name))
        manifest.append({"image": name, "stimulus": label, "extra_responses": extras})
    with open(os.path.join(HERE, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()

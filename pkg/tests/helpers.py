"""Small builders shared by the test modules."""
import numpy as np

from popdyn.dataset import COLUMNS, EngagementSequence, ImageRecord, NUMERIC_FEATURES


def make_record(image_id="a", days=None, tags=(), **features):
    vals = {c: 1.0 for c in NUMERIC_FEATURES}
    vals.update(features)
    if days is None:
        days = np.arange(1, 31, dtype=float)
    return ImageRecord(image_id=image_id, user_id="u", tags=tuple(tags),
                       sequence=EngagementSequence(np.asarray(days, dtype=float)), **vals)


def write_csv(path, rows, header=COLUMNS):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def csv_row(image_id, days, contacts="5", tags="a;b"):
    feats = [contacts] + ["1"] * (len(NUMERIC_FEATURES) - 1)
    return [image_id, "u1", *feats, tags, "t", *days]

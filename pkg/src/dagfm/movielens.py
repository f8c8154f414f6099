"""MovieLens-1M to CTR-CSV converter.

Joins ``ratings.dat`` with ``users.dat`` and ``movies.dat`` (``::``-separated,
latin-1 encoded) into the package's CSV layout with seven fields per
instance: user id, gender, age, occupation, zip code, movie id, and the
movie's genre string (the full ``|``-joined string is one categorical
value). The label is 1 when the rating is 4 or 5 — the usual binarization;
declared here because the source data is 1-to-5 stars, not clicks.
"""

from __future__ import annotations

from pathlib import Path

from .data import ParseError

FIELDS = ("user_id", "gender", "age", "occupation", "zip", "movie_id", "genre")


def _read_dat(path, n_cols: int, what: str):
    with open(path, "r", encoding="latin-1") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != n_cols:
                raise ParseError(
                    f"{what} line {line_no}: expected {n_cols} '::' fields, got {len(parts)}"
                )
            yield line_no, parts


def convert_movielens(ratings_path, users_path, movies_path, out_csv) -> int:
    """Write the joined CSV; returns the number of instances written."""
    users = {}
    for _, (uid, gender, age, occupation, zipcode) in _read_dat(users_path, 5, "users"):
        users[uid] = (gender, age, occupation, zipcode)
    movies = {}
    for _, (mid, _title, genres) in _read_dat(movies_path, 3, "movies"):
        movies[mid] = genres
    n = 0
    with open(out_csv, "w", encoding="utf-8") as out:
        out.write(",".join(["label", *FIELDS]) + "\n")
        for line_no, (uid, mid, rating, _ts) in _read_dat(ratings_path, 4, "ratings"):
            if uid not in users:
                raise ParseError(f"ratings line {line_no}: unknown user {uid}")
            if mid not in movies:
                raise ParseError(f"ratings line {line_no}: unknown movie {mid}")
            label = "1" if int(rating) >= 4 else "0"
            gender, age, occupation, zipcode = users[uid]
            out.write(
                ",".join([label, uid, gender, age, occupation, zipcode, mid, movies[mid]])
                + "\n"
            )
            n += 1
    return n


def convert_movielens_dir(ml_dir, out_csv) -> int:
    """Convenience wrapper over the standard ml-1m directory layout."""
    ml_dir = Path(ml_dir)
    return convert_movielens(
        ml_dir / "ratings.dat", ml_dir / "users.dat", ml_dir / "movies.dat", out_csv
    )

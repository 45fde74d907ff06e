"""Choice-set construction from a trained VAE and the choice-set CSV format.

One row per (observation, alternative): ``obs_id, split, alt_index, chosen``,
the absolute attributes, then ``log_bc`` and ``alpha_1..alpha_L`` when present.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import denormalize, normalize
from .errors import ParseError, SchemaError
from .estimation import ChoiceData
from .vae.iwae import estimate_log_bc, generate_alternatives
from .vae.model import VaeModel, nest_membership

DEFAULT_SET_SIZE = 20
KEY_COLUMNS = ("obs_id", "split", "alt_index", "chosen")


def build_choice_sets(
    model: VaeModel,
    chosen_rows,
    seed: int,
    set_size: int = DEFAULT_SET_SIZE,
    mc_draws: int | None = None,
    nest_draws: int = 100,
    workers: int = 1,
):
    """Chosen alternative plus ``set_size - 1`` generated ones per observation.

    Every alternative, chosen or generated, gets its ln BC and its
    nest-membership row.  Positions within a set are shuffled.  Returns
    ``(x_abs, chosen_index, log_bc, alpha)`` with leading shape (N, set_size).
    """
    if model.normalization is None:
        raise SchemaError("the checkpoint has no normalization constants")
    if set_size < 1:
        raise SchemaError("choice-set size must be at least 1")
    rows = np.asarray(chosen_rows, dtype=np.float64)
    S = mc_draws or model.hp.mc_draws
    seqs = np.random.SeedSequence(seed).spawn(len(rows))

    def one(n):
        rng = np.random.default_rng(seqs[n])
        gen = generate_alternatives(model, set_size - 1, rng)
        xn = np.vstack([normalize(rows[n], model.normalization)[None], gen])
        order = rng.permutation(set_size)
        xn = xn[order]
        lbc = estimate_log_bc(model, xn, S, rng)
        alpha = nest_membership(model, xn, rng, nest_draws)
        x_abs = denormalize(xn, model.normalization)
        pos = int(np.flatnonzero(order == 0)[0])
        x_abs[pos] = rows[n]  # keep the observed values exactly
        return x_abs, pos, lbc, alpha

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(len(rows))))
    else:
        out = [one(n) for n in range(len(rows))]
    return (
        np.stack([o[0] for o in out]),
        np.array([o[1] for o in out]),
        np.stack([o[2] for o in out]),
        np.stack([o[3] for o in out]),
    )


def _f(x) -> str:
    return format(float(x), ".17g")


def write_choice_sets(path, attributes, x, chosen, split, log_bc=None, alpha=None) -> None:
    N, J, _ = x.shape
    L = 0 if alpha is None else alpha.shape[2]
    header = list(KEY_COLUMNS) + list(attributes)
    if log_bc is not None:
        header.append("log_bc")
    header += [f"alpha_{m + 1}" for m in range(L)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n in range(N):
            for j in range(J):
                row = [n, split[n], j, int(chosen[n] == j)] + [_f(v) for v in x[n, j]]
                if log_bc is not None:
                    row.append(_f(log_bc[n, j]))
                if L:
                    row += [_f(a) for a in alpha[n, j]]
                w.writerow(row)


def read_choice_sets(path, attributes) -> dict:
    """Parse a choice-set file into one :class:`ChoiceData` per split label."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in list(KEY_COLUMNS) + list(attributes) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
        col = {name: i for i, name in enumerate(header)}
        alpha_cols = sorted((c for c in header if c.startswith("alpha_")), key=lambda c: int(c.split("_")[1]))
        has_bc = "log_bc" in col
        groups: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                obs = int(row[col["obs_id"]])
                chosen = int(row[col["chosen"]])
                vals = [float(row[col[a]]) for a in attributes]
                lbc = float(row[col["log_bc"]]) if has_bc else None
                al = [float(row[col[c]]) for c in alpha_cols]
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}", row=lineno) from None
            g = groups.setdefault(row[col["split"]], {})
            g.setdefault(obs, []).append((chosen, vals, lbc, al))
    out = {}
    for label, obs in groups.items():
        ids = sorted(obs)
        J = max(len(obs[i]) for i in ids)
        N, K, L = len(ids), len(attributes), len(alpha_cols)
        x = np.zeros((N, J, K))
        avail = np.zeros((N, J), bool)
        chosen = np.full(N, -1)
        log_bc = np.full((N, J), -np.inf) if has_bc else None
        alpha = np.full((N, J, L), 1.0 / L) if L else None
        for n, i in enumerate(ids):
            for j, (c, vals, lbc, al) in enumerate(obs[i]):
                x[n, j] = vals
                avail[n, j] = True
                if c:
                    if chosen[n] >= 0:
                        raise SchemaError(f"{path}: observation {i} has more than one chosen alternative")
                    chosen[n] = j
                if has_bc:
                    log_bc[n, j] = lbc
                if L:
                    alpha[n, j] = al
            if chosen[n] < 0:
                raise SchemaError(f"{path}: observation {i} has no chosen alternative")
        out[label] = ChoiceData(tuple(attributes), x, chosen, avail, log_bc, alpha)
    return out

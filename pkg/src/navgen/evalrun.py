"""Inference-time evaluation over dataset splits.

Navigation kinds run INFER rollouts and score nav metrics (grounding for
object localization); generation kinds decode text and score the text
suite. CIDEr is computed in a second pass over each kind's corpus.
"""

from __future__ import annotations

import numpy as np

from .agent import (INFER, answer_qa, eqa, localize, marker_reply_is_valid,
                    rollout, summarize)
from .config import RunConfig
from .datagen import Bundle
from .errors import EmptyReportError
from .metrics import (aggregate, bleu4, cider, em, grounding_metrics,
                      meteor_lite, nav_metrics, rouge_l)
from .rngutil import generator
from .tasks import KINDS
from .vocabulary import get_vocab


def _nav_row(report):
    return {"TL": report.TL, "NE": report.NE, "SR": report.SR,
            "OSR": report.OSR, "SPL": report.SPL, "GP": report.GP}


def evaluate(bundle: Bundle, params, cfg: RunConfig, kinds=None,
             exclude=(), policy="model", seed=None):
    """Returns (rows, summary, trajectories). ``policy`` selects the INFER
    action source for navigation kinds: model, oracle, or random."""
    seed = cfg.seed if seed is None else seed
    mc, ec = cfg.model, cfg.eval
    vocab = get_vocab()
    selected = [k for k in (kinds or KINDS) if k not in set(exclude)]
    rows, trajectories = [], []
    text_corpora = {}

    for kind in selected:
        items = bundle.episodes.get(kind, [])
        for idx, (widx, episode) in enumerate(items):
            world = bundle.worlds[widx]
            rng = generator(seed, f"eval-{kind}", idx)
            if kind in ("VLN", "OBJLOC"):
                traj = rollout(world, episode, params, INFER, mc, rng=rng,
                               eval_cfg=ec, policy=policy)
                row = {"kind": kind, "episode_id": episode.episode_id}
                row.update(_nav_row(nav_metrics(world, episode, traj, ec.success_threshold)))
                if kind == "OBJLOC":
                    selected_obj, reply = localize(world, episode, params, traj, mc, ec)
                    max_id = len(world.viewpoint(traj.visited[-1]).objects)
                    rgs, rgspl = grounding_metrics(world, episode, traj,
                                                   selected_obj, ec.success_threshold)
                    row["RGS"] = rgs
                    row["RGSPL"] = rgspl
                    row["loc_correct"] = int(selected_obj == episode.target_object[1])
                    row["format_valid"] = int(marker_reply_is_valid(reply, vocab, max_id))
                rows.append(row)
                trajectories.append(traj)
            elif kind == "SUMM":
                text = summarize(world, episode, params, mc, ec)
                row = {"kind": kind, "episode_id": episode.episode_id,
                       "EM": em(text, episode.references),
                       "BLEU4": bleu4(text, episode.references),
                       "ROUGEL": rouge_l(text, episode.references),
                       "METEOR": meteor_lite(text, episode.references)}
                text_corpora.setdefault(kind, []).append((len(rows), text, episode.references))
                rows.append(row)
            elif kind == "QA":
                answer = answer_qa(world, episode, params,
                                   list(episode.goal_viewpoints), mc, ec)
                refs = [episode.qa_answer]
                row = {"kind": kind, "episode_id": episode.episode_id,
                       "EM": em(answer, refs), "ACC": em(answer, refs),
                       "BLEU4": bleu4(answer, refs),
                       "ROUGEL": rouge_l(answer, refs),
                       "METEOR": meteor_lite(answer, refs)}
                text_corpora.setdefault(kind, []).append((len(rows), answer, refs))
                rows.append(row)
            elif kind == "EQA":
                nav_policy = "oracle" if policy == "oracle" else policy
                traj, answer = eqa(world, episode, params, mc, ec, rng=rng,
                                   nav_policy=nav_policy)
                row = {"kind": kind, "episode_id": episode.episode_id,
                       "ACC": em(answer, [episode.qa_answer])}
                row.update(_nav_row(nav_metrics(world, episode, traj, ec.success_threshold)))
                rows.append(row)
                trajectories.append(traj)

    for kind, corpus in text_corpora.items():
        scores = cider([(cand, refs) for _, cand, refs in corpus])
        for (row_idx, _, _), score in zip(corpus, scores):
            rows[row_idx]["CIDER"] = score

    if not rows:
        raise EmptyReportError("no episodes matched the requested kinds")
    return rows, aggregate(rows), trajectories


def rows_to_csv(rows) -> str:
    fields = ["episode_id", "kind"]
    fields += sorted({k for row in rows for k in row} - {"episode_id", "kind"})
    lines = [",".join(fields)]
    for row in rows:
        cells = []
        for f in fields:
            v = row.get(f, "")
            cells.append(repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def summary_table(summary: dict) -> str:
    """Pretty per-kind table of the aggregate summary."""
    kinds = sorted(summary["per_kind"])
    fields = sorted({f for k in kinds for f in summary["per_kind"][k] if f != "count"})
    header = ["kind", "count"] + fields
    widths = [max(8, len(h)) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for kind in kinds + ["overall"]:
        block = summary["per_kind"].get(kind, summary["overall"])
        cells = [kind, str(block["count"])]
        for f in fields:
            cells.append(f"{block[f]:.3f}" if f in block else "-")
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def random_walk_success(bundle: Bundle, cfg: RunConfig, kind="VLN", seed=None) -> float:
    """SR of the uniform random policy (stop included) on a kind; baseline."""
    rows, summary, _ = evaluate(bundle, params=_random_policy_params(cfg),
                                cfg=cfg, kinds=[kind], policy="random", seed=seed)
    return summary["per_kind"][kind]["SR"] / 100.0


def _random_policy_params(cfg: RunConfig):
    # The random policy never consults the model, but rollouts still encode
    # candidates; reuse a small init so vectors exist.
    from .model import init_params
    from .vocabulary import get_vocab
    return init_params(0, cfg.model, cfg.world.d_feat, len(get_vocab()))

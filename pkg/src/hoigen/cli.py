"""Command-line entry point: phases, persistence, reports, manifests.

Artifacts live under --out-dir with fixed names: objects.json, corpus.jsonl,
encoders.ckpt, eval_embedder.ckpt, cvae.ckpt, ardm.ckpt, report.json,
ablation.json, manifest.json, figures/*.png.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import domain as dm
from . import encoders, generation, metrics, persist, report, synth
from . import tokenizer as tkz

ARTIFACTS = ["objects.json", "corpus.jsonl", "encoders.ckpt", "eval_embedder.ckpt",
             "cvae.ckpt", "ardm.ckpt", "report.json", "report.csv",
             "ablation.json", "ablation.csv"]


class MissingArtifact(RuntimeError):
    pass


def _path(out_dir, name):
    return os.path.join(out_dir, name)


def _require(out_dir, name, hint):
    p = _path(out_dir, name)
    if not os.path.exists(p):
        raise MissingArtifact(f"{hint} checkpoint missing: expected {p}; {_phase_hint(name)}")
    return p


def _phase_hint(name):
    order = {"corpus.jsonl": "run `synth-data` first",
             "objects.json": "run `synth-data` first",
             "encoders.ckpt": "run `pretrain-encoders` first",
             "eval_embedder.ckpt": "run `pretrain-encoders` first",
             "cvae.ckpt": "run `train-cvae` first",
             "ardm.ckpt": "run `train-ardm` first"}
    return order.get(name, "rerun the earlier phases")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, cfg: cfgmod.Config):
    arts = {}
    for name in ARTIFACTS:
        p = _path(out_dir, name)
        if os.path.exists(p):
            arts[name] = _sha256(p)
    doc = {"command": command,
           "config_sha256": hashlib.sha256(
               json.dumps(cfg.as_dict(), sort_keys=True).encode()).hexdigest(),
           "seed": cfg.seed,
           "artifacts": arts}
    with open(_path(out_dir, "manifest.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def _load_inputs(out_dir, need_corpus=True, need_encoders=True):
    objects = dm.load_object_library(_require(out_dir, "objects.json", "object library"))
    corpus = None
    if need_corpus:
        corpus = dm.load_sequences(_require(out_dir, "corpus.jsonl", "corpus"))
    enc = None
    if need_encoders:
        enc, _ = persist.load_point_encoder(_require(out_dir, "encoders.ckpt", "encoder"))
    obj_embs = None
    if enc is not None:
        obj_embs = {label: enc.encode(o.points) for label, o in objects.items()}
    return objects, corpus, enc, obj_embs


# -- subcommands -----------------------------------------------------------------

def cmd_synth_data(cfg: cfgmod.Config, args, out_dir) -> int:
    n = args.n or cfg.corpus_n
    seed = cfg.corpus_seed if args.seed is None else args.seed
    objects = synth.build_object_library(cfg.objects_seed)
    obj_path = args.objects or _path(out_dir, "objects.json")
    dm.save_object_library(obj_path, list(objects.values()))
    corpus = synth.generate_corpus(n, seed, objects)
    for s in corpus:
        s.validate()
    out = args.out or _path(out_dir, "corpus.jsonl")
    dm.save_sequences(out, corpus)
    figs = report.ensure_dir(_path(out_dir, "figures"))
    report.fig_corpus_stats(corpus, os.path.join(figs, "corpus_stats.png"))
    print(f"wrote {len(corpus)} sequences to {out}")
    return 0


def cmd_pretrain_encoders(cfg: cfgmod.Config, args, out_dir) -> int:
    _, corpus, _, _ = _load_inputs(out_dir, need_corpus=True, need_encoders=False)
    enc, acc = encoders.pretrain_point_encoder(seed=cfg.seed, epochs=cfg.encoder_epochs)
    persist.save_point_encoder(_path(out_dir, "encoders.ckpt"), enc, acc)
    print(f"point encoder held-out accuracy: {acc:.3f}")
    emb = metrics.train_eval_embedder(corpus, seed=cfg.seed, epochs=cfg.eval_epochs)
    persist.save_eval_embedder(_path(out_dir, "eval_embedder.ckpt"), emb)
    print("eval embedder trained and frozen")
    return 0


def cmd_train_cvae(cfg: cfgmod.Config, args, out_dir) -> int:
    objects, corpus, _, obj_embs = _load_inputs(out_dir)
    tok, info = tkz.train_tokenizer(
        corpus, objects, obj_embs, cfg.tokenizer_config(), seed=cfg.seed,
        epochs=cfg.cvae_epochs, batch_size=cfg.cvae_batch, lr=cfg.cvae_lr,
        holdout=cfg.holdout, with_triplet=cfg.lambda_tri > 0, log=print)
    persist.save_tokenizer(_path(out_dir, "cvae.ckpt"), tok)
    figs = report.ensure_dir(_path(out_dir, "figures"))
    report.fig_loss_curves(info["history"], os.path.join(figs, "cvae_training.png"),
                           "tokenizer training")
    report.fig_latent_scatter(tok, info["held_triples"],
                              os.path.join(figs, "latent_scatter.png"))
    report.save_csv(_path(out_dir, "cvae_training.csv"),
                    list(info["history"][0].keys()),
                    [list(h.values()) for h in info["history"]])
    held = [corpus[i] for i in info["held_idx"]]
    sep = tkz.separation_ratio(tok, info["held_triples"])
    rec = tkz.reconstruction_error(tok, held, obj_embs)
    print(f"held-out separation ratio: {sep:.3f}; reconstruction mse: {rec:.4f}")
    return 0


def cmd_train_ardm(cfg: cfgmod.Config, args, out_dir) -> int:
    objects, corpus, _, obj_embs = _load_inputs(out_dir)
    tok = persist.load_tokenizer(_require(out_dir, "cvae.ckpt", "cVAE"))
    model, info = generation.train_generator(
        corpus, tok, obj_embs, cfg.generator_config(), seed=cfg.seed,
        epochs=cfg.ardm_epochs, batch_size=cfg.ardm_batch, lr=cfg.ardm_lr, log=print)
    persist.save_generator(_path(out_dir, "ardm.ckpt"), model)
    figs = report.ensure_dir(_path(out_dir, "figures"))
    report.fig_loss_curves(info["history"], os.path.join(figs, "ardm_training.png"),
                           "token generator training")
    report.save_csv(_path(out_dir, "ardm_training.csv"), ["epoch", "loss"],
                    [[i, v] for i, v in enumerate(info["history"])])
    return 0


def cmd_generate(cfg: cfgmod.Config, args, out_dir) -> int:
    objects, _, enc, obj_embs = _load_inputs(out_dir, need_corpus=False)
    tok = persist.load_tokenizer(_require(out_dir, "cvae.ckpt", "cVAE"))
    model = persist.load_generator(_require(out_dir, "ardm.ckpt", "ARDM"))
    if args.object not in objects:
        raise MissingArtifact(f"object {args.object!r} not in library "
                              f"({', '.join(sorted(objects))})")
    req = generation.GenRequest(text=args.text, object_label=args.object,
                                seed=args.seed if args.seed is not None else cfg.seed,
                                xi=args.xi, max_tokens=cfg.max_tokens)
    res = generation.generate(model, tok, objects[args.object],
                              obj_embs[args.object], req)
    doc = {"text": res.sequence.text, "object": res.sequence.object_label,
           "fps": res.sequence.fps,
           "frames": np.round(res.sequence.frames, 7).tolist(),
           "stop_reason": res.stop_reason, "token_count": res.token_count}
    out = args.out or _path(out_dir, "generated.json")
    with open(out, "w") as f:
        json.dump(doc, f)
    print(f"generated {len(res.sequence)} frames ({res.stop_reason}) -> {out}")
    return 0


def cmd_eval(cfg: cfgmod.Config, args, out_dir) -> int:
    objects = dm.load_object_library(_require(out_dir, "objects.json", "object library"))
    real = dm.load_sequences(args.real)
    gen = dm.load_sequences(args.gen)
    emb_path = _path(out_dir, "eval_embedder.ckpt")
    if os.path.exists(emb_path):
        emb = persist.load_eval_embedder(emb_path)
    else:
        emb = metrics.train_eval_embedder(real, seed=cfg.seed, epochs=cfg.eval_epochs)
        persist.save_eval_embedder(emb_path, emb)
    rep = metrics.evaluate(real, gen, emb, objects, runs=cfg.eval_runs, seed=cfg.seed)
    doc = rep.as_dict()
    out = args.report or _path(out_dir, "report.json")
    with open(out, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    report.report_to_csv(_path(out_dir, "report.csv"), doc)
    figs = report.ensure_dir(_path(out_dir, "figures"))
    report.fig_metric_bars(doc, os.path.join(figs, "metrics.png"))
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def cmd_ablate(cfg: cfgmod.Config, args, out_dir) -> int:
    from . import ablations
    rows = ablations.run_ablation_grid(cfg, out_dir, log=print)
    with open(_path(out_dir, "ablation.json"), "w") as f:
        json.dump(rows, f, indent=1, sort_keys=True)
    header = list(rows[0].keys())
    report.save_csv(_path(out_dir, "ablation.csv"), header,
                    [[r[k] for k in header] for r in rows])
    figs = report.ensure_dir(_path(out_dir, "figures"))
    report.fig_ablation(rows, os.path.join(figs, "ablation.png"))
    for r in rows:
        print(" ".join(f"{k}={v}" for k, v in r.items()))
    return 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "pretrain-encoders": cmd_pretrain_encoders,
    "train-cvae": cmd_train_cvae,
    "train-ardm": cmd_train_ardm,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def run(command: str, cfg: cfgmod.Config, args, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    try:
        status = COMMANDS[command](cfg, args, out_dir)
    except MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    write_manifest(out_dir, command, cfg)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hoigen",
                                description="text-conditioned HOI sequence synthesis")
    p.add_argument("--config", help="JSON config path")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default="out")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate the synthetic corpus")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None, dest="seed")
    sp.add_argument("--out", default=None)
    sp.add_argument("--objects", default=None)

    sub.add_parser("pretrain-encoders", help="train the frozen condition encoders")
    sub.add_parser("train-cvae", help="phase 1: train the clip tokenizer")
    sub.add_parser("train-ardm", help="phase 2: train the token generator")

    gp = sub.add_parser("generate", help="generate one sequence")
    gp.add_argument("--text", required=True)
    gp.add_argument("--object", required=True)
    gp.add_argument("--seed", type=int, default=None, dest="seed")
    gp.add_argument("--xi", type=float, default=None)
    gp.add_argument("--out", default=None)

    ep = sub.add_parser("eval", help="evaluate generated against real sequences")
    ep.add_argument("--real", required=True)
    ep.add_argument("--gen", required=True)
    ep.add_argument("--report", default=None)

    sub.add_parser("ablate", help="run the architecture/loss ablation grid")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {}
    if args.config:
        cfg = cfgmod.load_config(args.config)
    else:
        cfg = cfgmod.make_config(args.preset, overrides)
    if getattr(args, "seed", None) is not None and args.command != "synth-data":
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return run(args.command, cfg, args, args.out_dir)


if __name__ == "__main__":
    sys.exit(main())

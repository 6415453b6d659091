"""Command-line interface.

Every subcommand runs in-process by default. With ``--server URL`` the same
subcommands run against a running service instead: corpus files are read and
written locally and shipped in request bodies, while training and checkpoint
paths are resolved on the server.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import harness
from .autodiff import AutodiffError
from .corpus import CorpusError
from .metrics import PRF, format_report

__all__ = ["build_parser", "main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xlcoref",
        description="Span-based coreference resolver with a cross-lingual module.",
    )
    parser.add_argument(
        "--server",
        default=None,
        metavar="URL",
        help="run the command against a service at URL instead of in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a deterministic toy corpus")
    p.add_argument("--n", type=int, required=True, help="number of documents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output corpus file")

    p = sub.add_parser("translate", help="pseudo-translate a corpus into parallel data")
    p.add_argument("--in", dest="in_path", required=True, help="input corpus file")
    p.add_argument("--out", required=True, help="output parallel corpus file")
    p.add_argument("--mode", choices=["identity", "xenoglot"], default="identity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--attach-clusters",
        action="store_true",
        help="copy source clusters onto the target side (identity mode only)",
    )

    for name, help_text in (
        ("train", "monolingual training"),
        ("train-xl", "joint training on parallel data"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument(
            "overrides", nargs="*", metavar="key=value", help="config overrides"
        )

    p = sub.add_parser("evaluate", help="score a checkpoint against a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None, help="metrics JSON path (default: run dir)")

    p = sub.add_parser("predict", help="write a corpus with predicted clusters")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze-pairs", help="classify predicted cross-lingual pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="identity-mode parallel corpus")
    p.add_argument("--tsv", default=None, help="also dump every pair as TSV")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _print_train_summary(best_epoch: int, best_f1: float, run_dir: str) -> None:
    print(f"best epoch {best_epoch} dev avg F1 {best_f1:.4f}")
    print(f"run directory: {run_dir}")


def _run_local(args: argparse.Namespace) -> int:
    if args.command == "gen-corpus":
        n = harness.gen_corpus(args.n, args.seed, args.out)
        print(f"wrote {n} documents to {args.out}")
    elif args.command == "translate":
        n = harness.translate(
            args.in_path, args.out, args.mode, args.seed, args.attach_clusters
        )
        print(f"wrote {n} parallel documents to {args.out}")
    elif args.command in ("train", "train-xl"):
        config = harness.load_config(args.config, tuple(args.overrides))
        runner = harness.train if args.command == "train" else harness.train_xl
        result = runner(config)
        _print_train_summary(result.best_epoch, result.best_dev_avg_f1, str(result.run_dir))
    elif args.command == "evaluate":
        result = harness.evaluate(args.checkpoint, args.corpus, args.out)
        print(format_report(result))
    elif args.command == "predict":
        n = harness.predict(args.checkpoint, args.corpus, args.out)
        print(f"wrote {n} documents to {args.out}")
    elif args.command == "analyze-pairs":
        analysis, _ = harness.analyze(args.checkpoint, args.corpus, args.tsv)
        print(json.dumps(analysis.to_dict(), sort_keys=True))
    elif args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def _post(server: str, path: str, payload: dict) -> dict:
    import httpx

    response = httpx.post(server.rstrip("/") + path, json=payload, timeout=600.0)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise harness.HarnessError(f"server returned {response.status_code}: {detail}")
    return response.json()


def _read_jsonl(path: str) -> list[dict]:
    if not Path(path).is_file():
        raise harness.HarnessError(f"file not found: {path}")
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def _write_jsonl(path: str, objects: list[dict]) -> None:
    text = "".join(
        json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n" for obj in objects
    )
    Path(path).write_text(text, encoding="utf-8")


def _run_remote(args: argparse.Namespace) -> int:
    server = args.server
    if args.command == "gen-corpus":
        body = _post(server, "/gen-corpus", {"n_docs": args.n, "seed": args.seed})
        _write_jsonl(args.out, body["documents"])
        print(f"wrote {len(body['documents'])} documents to {args.out}")
    elif args.command == "translate":
        body = _post(
            server,
            "/translate",
            {
                "documents": _read_jsonl(args.in_path),
                "mode": args.mode,
                "seed": args.seed,
                "attach_clusters": args.attach_clusters,
            },
        )
        docs = [
            {k: v for k, v in doc.items() if v is not None}
            for doc in body["documents"]
        ]
        _write_jsonl(args.out, docs)
        print(f"wrote {len(docs)} parallel documents to {args.out}")
    elif args.command in ("train", "train-xl"):
        config = harness.load_config(args.config, tuple(args.overrides))
        body = _post(
            server, "/" + args.command, {"config": config.model_dump()}
        )
        _print_train_summary(body["best_epoch"], body["best_dev_avg_f1"], body["run_dir"])
    elif args.command == "evaluate":
        body = _post(
            server,
            "/evaluate",
            {"checkpoint": args.checkpoint, "corpus": args.corpus, "output_json": args.out},
        )
        result = {
            key: PRF(**body[key]) for key in ("mention", "muc", "b_cubed", "ceaf_e")
        }
        result["avg_f1"] = body["avg_f1"]
        print(format_report(result))
    elif args.command == "predict":
        body = _post(
            server, "/predict", {"checkpoint": args.checkpoint, "corpus": args.corpus}
        )
        _write_jsonl(args.out, body["documents"])
        print(f"wrote {len(body['documents'])} documents to {args.out}")
    elif args.command == "analyze-pairs":
        body = _post(
            server,
            "/analyze-pairs",
            {
                "checkpoint": args.checkpoint,
                "corpus": args.corpus,
                "include_tsv": args.tsv is not None,
            },
        )
        if args.tsv is not None:
            Path(args.tsv).write_text(body.pop("tsv") or "", encoding="utf-8")
        else:
            body.pop("tsv", None)
        print(json.dumps(body, sort_keys=True))
    elif args.command == "serve":
        raise harness.HarnessError("serve cannot itself run against --server")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.server:
            return _run_remote(args)
        return _run_local(args)
    except (harness.HarnessError, CorpusError, AutodiffError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

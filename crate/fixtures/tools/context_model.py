#!/usr/bin/env python3
"""Small deterministic context model that speaks the embedding provider protocol.

Pre-embeddings are 100-d GloVe word vectors (no positional term). Post
embeddings come from a parameter-free causal self-attention stack over the
pre vectors plus sinusoidal positions. An EOS token is appended and its final
hidden state is the "eos" vector.

    python3 context_model.py subset --glove wink-embeddings-sg-100d.json \
        --out glove_subset.json ../dataset.jsonl ../lexicon.tsv ../vocab.txt
    python3 context_model.py serve --table glove_subset.json --port 8765

The server answers POST /embed with {"text": ...}.
"""

import argparse
import hashlib
import json
import re
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

MODEL_TAG = "glove100-causal-attn2-v1"
TOKENIZER_TAG = "lower-alnum-punct-v1;pre=no-positional;eos=appended-token"
DIM = 100
LAYERS = 2
EOS = "<eos>"
TOKEN_RE = re.compile(r"[a-z]+|[0-9]+|[^\sa-z0-9]")


def tokenize(text):
    return TOKEN_RE.findall(text.lower())


def hashed_vector(token, norm):
    seed = int.from_bytes(hashlib.sha256(token.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(DIM)
    return v * (norm / np.linalg.norm(v))


def positions(n):
    pos = np.arange(n)[:, None]
    i = np.arange(DIM // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / DIM)
    pe = np.zeros((n, DIM))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def layer_norm(h):
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    return (h - mu) / np.sqrt(var + 1e-6)


def attend(h):
    n = h.shape[0]
    logits = h @ h.T / np.sqrt(DIM)
    logits[np.triu_indices(n, 1)] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ h


class Model:
    def __init__(self, table):
        self.table = {w: np.asarray(v, dtype=np.float64) for w, v in table.items()}
        self.typical_norm = float(np.median([np.linalg.norm(v) for v in self.table.values()]))

    def vector(self, token):
        v = self.table.get(token)
        return v if v is not None else hashed_vector(token, self.typical_norm)

    def embed(self, text):
        tokens = tokenize(text)
        if not tokens:
            raise ValueError("text has no tokens")
        pre = np.stack([self.vector(t) for t in tokens + [EOS]])
        h = pre + positions(len(pre))
        for _ in range(LAYERS):
            h = layer_norm(h + attend(h))
        return {
            "model_tag": MODEL_TAG,
            "tokenizer_tag": TOKENIZER_TAG,
            "token_count": len(tokens),
            "pre": pre[:-1].astype(np.float32).tolist(),
            "post": h[:-1].astype(np.float32).tolist(),
            "eos": h[-1].astype(np.float32).tolist(),
            "normalized": False,
        }


def subset(args):
    words = set()
    for path in args.sources:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if path.endswith(".jsonl"):
                    line = json.loads(line)["text"] if line.strip() else ""
                elif line.startswith("#"):
                    continue
                words.update(tokenize(line))
    with open(args.glove, encoding="utf-8") as f:
        glove = json.load(f)["vectors"]
    # Rows carry two bookkeeping slots after the vector itself.
    table = {w: [round(x, 6) for x in glove[w][:DIM]] for w in sorted(words) if w in glove}
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(table, f, separators=(",", ":"))
        f.write("\n")
    print(f"{len(table)} of {len(words)} tokens found", file=sys.stderr)


def serve(args):
    with open(args.table, encoding="utf-8") as f:
        model = Model(json.load(f))

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path != "/embed":
                return self.reply(404, {"error": "not found"})
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                text = body["text"]
                if not isinstance(text, str) or not tokenize(text):
                    raise ValueError("text must be a string with at least one token")
            except (ValueError, KeyError, TypeError) as e:
                return self.reply(400, {"error": str(e)})
            try:
                out = model.embed(text)
            except Exception as e:  # noqa: BLE001
                return self.reply(500, {"error": str(e)})
            self.reply(200, out)

        def reply(self, status, obj):
            data = json.dumps(obj).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *_):
            pass

    server = ThreadingHTTPServer((args.host, args.port), Handler)
    print(f"serving {MODEL_TAG} on http://{args.host}:{server.server_port}/embed", file=sys.stderr)
    server.serve_forever()


def main():
    p = argparse.ArgumentParser()
    sub = p.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("subset")
    s.add_argument("--glove", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("sources", nargs="+")
    s.set_defaults(func=subset)
    v = sub.add_parser("serve")
    v.add_argument("--table", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8765)
    v.set_defaults(func=serve)
    args = p.parse_args()
    args.func(args)


if __name__ == "__main__":
    main()

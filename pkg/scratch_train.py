import sys
import time

import numpy as np

from dqlab.config import parse_config, build_run
from dqlab.objectives import evaluate_loglik
from dqlab.train import train_model

TEXT = """
data.kind=checkerboard
model.kind={model}
model.subflows=8
dequant.kind={dequant}
train.objective={obj}
train.k={k}
train.epochs={epochs}
train.seed={seed}
train.eval_k=64
train.val_size=512
eval.size=20000
"""


def run(model, dequant, obj="vi", k=1, epochs=30, seed=0, eval_k=256,
        eval_size=20000):
    cfg = parse_config(TEXT.format(model=model, dequant=dequant, obj=obj,
                                   k=k, epochs=epochs, seed=seed))
    bundle, m, q = build_run(cfg)
    t0 = time.time()

    def prog(row):
        if row["epoch"] % 5 == 0 or row["epoch"] == 1:
            print(f"  ep {row['epoch']:3d} loss {row['train_loss_nats']:.4f} "
                  f"val_vi {row['val_vi_bits']:.4f} "
                  f"val_iw {row['val_iw256_bits']:.4f}", flush=True)

    res, state = train_model(m, q, bundle.source, cfg.train, progress=prog)
    dt = time.time() - t0
    ev = np.random.default_rng(99)
    x = bundle.source.sample(eval_size, ev)
    rep = evaluate_loglik(x, q, m, eval_k, ev)
    print(f"{model}/{dequant}/{obj}(k={k}) epochs={epochs}: "
          f"vi {rep.vi_bits:.4f} iw{eval_k} {rep.iw_bits:.4f} "
          f"gap {rep.gap_bits:.4f}  [{dt:.0f}s]", flush=True)
    return rep


if __name__ == "__main__":
    which = sys.argv[1]
    if which == "flowflow":
        run("flow", "bipartite", epochs=40)
    elif which == "flowuni":
        run("flow", "uniform", epochs=40)
    elif which == "diaguni":
        run("diag", "uniform", epochs=30)
    elif which == "covflow":
        run("cov", "bipartite", epochs=40)
    elif which == "iwtrain":
        run("flow", "uniform", obj="iw", k=16, epochs=40)
    elif which == "vrmax":
        run("flow", "uniform", obj="vrmax", k=2, epochs=40)

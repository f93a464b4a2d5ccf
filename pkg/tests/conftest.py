import sys
from pathlib import Path
from types import SimpleNamespace

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)

# A budget small enough that the full phase chain runs in seconds; shared
# by the pipeline and CLI tests so the stack is only trained once.
MICRO_OVERRIDES = [
    "data.train_scenes=24",
    "data.val_scenes=8",
    "wavevit.epochs=1",
    "wavevit.batch_size=8",
    "vae.epochs=2",
    "vae.batch_size=8",
    "train.base_steps=12",
    "train.mwt_steps=12",
    "train.batch_size=4",
    "train.log_every=6",
    "eval.num_scenes=4",
    "eval.sample_steps=5",
    "eval.fid_min_per_category=2",
]


@pytest.fixture(scope="session")
def micro_cfg():
    from mwtdiff.config import load_config

    return load_config(None, MICRO_OVERRIDES)


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory, micro_cfg):
    from mwtdiff import pipeline

    run_dir = tmp_path_factory.mktemp("micro-run")
    pipeline.run_generate_data(micro_cfg, run_dir)
    pipeline.run_pretrain_wavevit(micro_cfg, run_dir)
    pipeline.run_train_vae(micro_cfg, run_dir)
    base = pipeline.run_train_base(micro_cfg, run_dir)
    mwt = pipeline.run_train_mwt(micro_cfg, run_dir)
    return SimpleNamespace(run_dir=run_dir, base=base, mwt=mwt)

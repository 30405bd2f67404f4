from statistics import mean

import pytest

from app.schemas.config import MotionMode
from app.tasks.pipeline_tasks import toy_experiment_task


@pytest.mark.slow
def test_mcb_with_ad_learns_the_jitter_task(tmp_path):
    result = toy_experiment_task(str(tmp_path), seed=0, steps=2000)
    assert result["auc"] >= 0.90
    assert result["acc"] >= 0.85
    assert result["clue_real"] <= 0.5 * result["clue_fake"]
    assert result["loss_final"] <= 0.5 * result["loss_first"]
    # 2000 steps on one CPU core
    assert result["train_seconds"] <= 900, f"training took {result['train_seconds']:.0f}s"


@pytest.mark.slow
def test_ablation_ordering(tmp_path):
    def mean_auc(mode, ad_enabled):
        return mean(toy_experiment_task(str(tmp_path), mode=mode, ad_enabled=ad_enabled, seed=s)["auc"]
                    for s in (0, 1, 2))

    cstm = mean_auc(MotionMode.CSTM_ONLY, False)
    mcb = mean_auc(MotionMode.MCB, False)
    mcb_ad = mean_auc(MotionMode.MCB, True)
    assert mcb_ad >= mcb - 0.02
    assert mcb >= cstm + 0.05

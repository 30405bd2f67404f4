import asyncio
import os
import time
from typing import Dict, List, Optional

from app.autograd.gradcheck import OP_CHECKS, GradCheckReport, grad_check
from app.models.network import Model, build_model, forward
from app.autograd.tensor import no_tape
from app.schemas.config import GenParams, ModelConfig, MotionMode, TrainConfig
from app.schemas.records import Manifest
from app.services.checkpoint_service import Checkpoint, load_checkpoint, save_checkpoint
from app.services.heatmap_service import export_heatmap
from app.services.metrics_engine import MetricsEngine, write_report
from app.services.synth_service import MANIFEST_NAME, load_dataset, write_dataset
from app.services.tensor_io import read_tensor
from app.services.training_service import TrainResult, train, write_metrics_log
from app.utils.exceptions import FormatError
from app.utils.logger import get_loggers

logger = get_loggers("PipelineTasks")


def gen_data_task(out_dir: str, count: int, fake_ratio: float, params: GenParams, seed: int) -> Manifest:
    return asyncio.run(write_dataset(out_dir, count, fake_ratio, params, seed))


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    if ckpt.model_config is None:
        raise FormatError("checkpoint carries no model configuration")
    model = build_model(ckpt.model_config)
    model.load_state_dict(ckpt.params)
    return model


def train_task(data_dir: str, out_path: str, cfg: TrainConfig, model_cfg: ModelConfig,
               resume_path: Optional[str] = None, log_path: Optional[str] = None) -> TrainResult:
    dataset = load_dataset(data_dir)
    resume = None
    if resume_path:
        resume = load_checkpoint(resume_path)
        if resume.model_config is not None:
            model_cfg = resume.model_config
    model = build_model(model_cfg)
    result = train(model, dataset, cfg, resume=resume)
    save_checkpoint(out_path, result.checkpoint)
    if log_path:
        write_metrics_log(log_path, result.log)
    return result


def eval_task(data_dir: str, ckpt_path: str, report_path: Optional[str] = None,
              batch_size: int = 16) -> Dict[str, float]:
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    metrics = MetricsEngine(model, batch_size).evaluate(load_dataset(data_dir))
    if report_path:
        write_report(report_path, metrics)
    return metrics


def gradcheck_task(seed: int = 1, op: Optional[str] = None) -> List[GradCheckReport]:
    op_ids = [op] if op else list(OP_CHECKS)
    reports = [grad_check(op_id, seed=seed) for op_id in op_ids]
    failed = [r.op_id for r in reports if not r.passed]
    if failed:
        logger.warning(f"Gradient check failed for {', '.join(failed)}")
    return reports


def heatmap_task(ckpt_path: str, input_path: str, out_prefix: str) -> List[str]:
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    if model.ad is None:
        raise FormatError(f"{ckpt_path}: model was trained without the anomaly branch")
    with no_tape():
        out = forward(model, read_tensor(input_path))
    return export_heatmap(out.f_star, out_prefix)


def toy_experiment_task(work_dir: str, mode: MotionMode = MotionMode.MCB, ad_enabled: bool = True,
                        seed: int = 0, steps: int = 2000, n_train: int = 512, n_test: int = 128,
                        params: Optional[GenParams] = None) -> Dict[str, Optional[float]]:
    """Generate the train/test split once per seed, train one configuration and score it."""
    params = params or GenParams()
    train_dir = os.path.join(work_dir, f"train_s{seed}")
    test_dir = os.path.join(work_dir, f"test_s{seed}")
    if not os.path.exists(os.path.join(train_dir, MANIFEST_NAME)):
        gen_data_task(train_dir, n_train, 0.5, params, seed)
    if not os.path.exists(os.path.join(test_dir, MANIFEST_NAME)):
        gen_data_task(test_dir, n_test, 0.5, params, seed + 10_000)
    cfg = TrainConfig(steps=steps, seed=seed, mode=mode, ad_enabled=ad_enabled)
    model = build_model(ModelConfig(stages=2, base_width=16, mode=mode, ad_enabled=ad_enabled, seed=seed))
    started = time.perf_counter()
    log = train(model, load_dataset(train_dir), cfg).log
    elapsed = time.perf_counter() - started
    test = load_dataset(test_dir)
    engine = MetricsEngine(model)
    result: Dict[str, Optional[float]] = dict(engine.evaluate(test))
    result.update({"train_seconds": elapsed, "loss_first": float(log["total"].iloc[0]) if len(log) else None,
                   "loss_final": float(log["total"].iloc[-1]) if len(log) else None})
    if ad_enabled:
        energy = engine.ad_clue_energy(test.tensors, test.labels)
        result.update({"clue_real": energy["real"], "clue_fake": energy["fake"]})
    logger.info(f"Toy run {mode.value} ad={ad_enabled} seed={seed}: {result}")
    return result

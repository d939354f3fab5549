"""Experiment configuration: one JSON document per run, validated with
field-path diagnostics, then materialized into the module-level objects."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .baselines import BaselineConfig, REJECTION_MLE, TRAINER_KINDS
from .dpg import DpgConfig
from .ebm import DEFAULT_LAMBDA_CLAMP, FitConfig
from .errors import ConfigError
from .features import (
    ConstraintSet,
    ConstraintSpec,
    PrefixMatch,
    TokenPresence,
    TokenRatio,
    WordlistPresence,
)
from .lm import SgdConfig, TabularARModel, mle_fit
from .metrics import EvalOptions
from .seqspace import SequenceSpace, tokenize_corpus

GDC_METHOD = "gdc"
FEATURE_KINDS = ("token-presence", "wordlist-presence", "token-ratio", "prefix-match")


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _get(d: dict, path: str, key: str, kind, required: bool = True, default=None):
    if key not in d:
        _expect(not required, f"{path}.{key}", "missing required field")
        return default
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    _expect(
        isinstance(value, kind) and not (kind in (int, float) and isinstance(value, bool)),
        f"{path}.{key}",
        f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
    )
    return value


@dataclass
class ExperimentConfig:
    seed: int
    lmax: int
    base_model: dict
    constraints: list[dict]
    fit: dict
    trainer: dict
    eval: dict
    output: str | None
    config_dir: Path

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from None
        return cls.from_dict(raw, config_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, config_dir: Path = Path(".")) -> "ExperimentConfig":
        _expect(isinstance(raw, dict), "config", "document must be a JSON object")
        seed = _get(raw, "config", "seed", int)
        space = _get(raw, "config", "space", dict)
        lmax = _get(space, "config.space", "lmax", int)
        _expect(lmax >= 1, "config.space.lmax", "must be >= 1")
        base_model = _get(raw, "config", "base_model", dict)
        has_corpus = "corpus" in base_model
        has_file = "model_file" in base_model
        _expect(
            has_corpus != has_file,
            "config.base_model",
            "exactly one of 'corpus' or 'model_file' must be present",
        )
        if has_corpus:
            _get(base_model, "config.base_model", "corpus", str)
            order = _get(base_model, "config.base_model", "order", int)
            _expect(order >= 1, "config.base_model.order", "must be >= 1")
            smoothing = _get(base_model, "config.base_model", "smoothing", float)
            _expect(smoothing >= 0, "config.base_model.smoothing", "must be >= 0")
        else:
            _get(base_model, "config.base_model", "model_file", str)
        constraints = _get(raw, "config", "constraints", list, required=False, default=[])
        for i, c in enumerate(constraints):
            cls._validate_constraint(c, f"config.constraints[{i}]")
        fit = _get(raw, "config", "fit", dict, required=False, default={})
        cls._validate_fit(fit)
        trainer = _get(raw, "config", "trainer", dict, required=False, default={})
        if trainer:
            cls._validate_trainer(trainer)
        eval_block = _get(raw, "config", "eval", dict, required=False, default={})
        cls._validate_eval(eval_block)
        output = _get(raw, "config", "output", str, required=False)
        return cls(
            seed=seed,
            lmax=lmax,
            base_model=base_model,
            constraints=constraints,
            fit=fit,
            trainer=trainer,
            eval=eval_block,
            output=output,
            config_dir=config_dir,
        )

    @staticmethod
    def _validate_constraint(c, path: str) -> None:
        _expect(isinstance(c, dict), path, "constraint must be an object")
        _get(c, path, "id", str)
        kind = _get(c, path, "kind", str)
        _expect(kind in FEATURE_KINDS, f"{path}.kind", f"must be one of {FEATURE_KINDS}")
        target = _get(c, path, "target", float)
        pointwise = _get(c, path, "pointwise", bool, required=False, default=False)
        if pointwise:
            _expect(target == 1.0, f"{path}.target", "pointwise target must be 1.0")
            _expect(
                kind != "token-ratio",
                f"{path}.kind",
                "token-ratio is real-valued; pointwise constraints need a binary feature",
            )
        elif kind != "token-ratio":
            _expect(
                0.0 < target < 1.0,
                f"{path}.target",
                "distributional target for a binary feature must lie strictly in (0, 1)",
            )
        else:
            _expect(0.0 <= target <= 1.0, f"{path}.target", "must lie in [0, 1]")
        if kind == "token-presence":
            _get(c, path, "token", str)
        elif kind in ("wordlist-presence", "prefix-match"):
            tokens = _get(c, path, "tokens", list)
            _expect(len(tokens) > 0, f"{path}.tokens", "must be non-empty")
        else:
            _get(c, path, "numerator", list)
            _get(c, path, "denominator", list)

    @staticmethod
    def _validate_fit(fit: dict) -> None:
        path = "config.fit"
        n = _get(fit, path, "sample_count", int, required=False, default=100000)
        _expect(n >= 1, f"{path}.sample_count", "must be >= 1")
        lr = _get(fit, path, "learning_rate", float, required=False, default=0.5)
        _expect(lr > 0, f"{path}.learning_rate", "must be > 0")
        tol = _get(fit, path, "tolerance", float, required=False, default=0.01)
        _expect(tol > 0, f"{path}.tolerance", "must be > 0")
        steps = _get(fit, path, "max_steps", int, required=False, default=10000)
        _expect(steps >= 1, f"{path}.max_steps", "must be >= 1")
        clamp = _get(fit, path, "lambda_clamp", float, required=False, default=DEFAULT_LAMBDA_CLAMP)
        _expect(clamp > 0, f"{path}.lambda_clamp", "must be > 0")

    @staticmethod
    def _validate_trainer(trainer: dict) -> None:
        path = "config.trainer"
        method = _get(trainer, path, "method", str)
        methods = (GDC_METHOD,) + TRAINER_KINDS + (REJECTION_MLE,)
        _expect(method in methods, f"{path}.method", f"must be one of {methods}")
        if method == REJECTION_MLE:
            budget = _get(trainer, path, "sample_budget", int)
            _expect(budget >= 1, f"{path}.sample_budget", "must be >= 1")
            order = _get(trainer, path, "fit_order", int)
            _expect(order >= 1, f"{path}.fit_order", "must be >= 1")
            _get(trainer, path, "fit_smoothing", float, required=False, default=1.0)
            return
        iters = _get(trainer, path, "iterations", int)
        _expect(iters >= 0, f"{path}.iterations", "must be >= 0")
        k = _get(trainer, path, "samples_per_iteration", int)
        _expect(k >= 1, f"{path}.samples_per_iteration", "must be >= 1")
        lr = _get(trainer, path, "learning_rate", float)
        _expect(lr > 0, f"{path}.learning_rate", "must be > 0")
        if method == GDC_METHOD:
            adaptivity = _get(trainer, path, "adaptivity", str, required=False, default="kl")
            _expect(
                adaptivity in ("kl", "tvd", "none"),
                f"{path}.adaptivity",
                "must be one of ('kl', 'tvd', 'none')",
            )
            _get(trainer, path, "batch_update", bool, required=False, default=True)
            optimizer = _get(trainer, path, "optimizer", str, required=False, default="sgd")
            _expect(
                optimizer in ("sgd", "adam"),
                f"{path}.optimizer",
                "must be one of ('sgd', 'adam')",
            )
        if method == "kl-penalized":
            beta = _get(trainer, path, "beta", float)
            _expect(beta >= 0, f"{path}.beta", "must be >= 0")
            adaptive = _get(trainer, path, "beta_adaptive", bool, required=False, default=False)
            if adaptive:
                _get(trainer, path, "kl_target", float)
        elif "beta" in trainer:
            _expect(False, f"{path}.beta", "only valid for the kl-penalized method")

    @staticmethod
    def _validate_eval(eval_block: dict) -> None:
        path = "config.eval"
        every = _get(eval_block, path, "eval_every", int, required=False, default=10)
        _expect(every >= 1, f"{path}.eval_every", "must be >= 1")
        size = _get(eval_block, path, "sample_size", int, required=False, default=1024)
        _expect(size >= 2, f"{path}.sample_size", "must be >= 2")
        _get(eval_block, path, "exact_oracle", bool, required=False, default=False)
        threshold = _get(eval_block, path, "threshold", float, required=False)
        if threshold is not None:
            _expect(threshold > 0, f"{path}.threshold", "must be > 0")

    @property
    def ablation_variants(self) -> list[str]:
        block = self.eval.get("ablation", {})
        variants = block.get("variants", ["kl", "tvd", "none"])
        for v in variants:
            _expect(
                v in ("kl", "tvd", "none"),
                "config.eval.ablation.variants",
                f"unknown variant {v!r}",
            )
        return variants

    @property
    def ablation_seeds(self) -> list[int]:
        block = self.eval.get("ablation", {})
        seeds = block.get("seeds", [0, 1, 2])
        for s in seeds:
            _expect(
                isinstance(s, int) and not isinstance(s, bool),
                "config.eval.ablation.seeds",
                "seeds must be integers",
            )
        return seeds

    # -- materialization -----------------------------------------------------

    def build_base(self) -> TabularARModel:
        if "model_file" in self.base_model:
            doc = json.loads((self.config_dir / self.base_model["model_file"]).read_text())
            model = TabularARModel.from_document(doc)
            _expect(
                model.space.lmax == self.lmax,
                "config.space.lmax",
                f"model file has lmax {model.space.lmax}, config says {self.lmax}",
            )
            return model
        corpus_path = self.config_dir / self.base_model["corpus"]
        try:
            text = corpus_path.read_text()
        except FileNotFoundError:
            raise ConfigError(f"config.base_model.corpus: file not found: {corpus_path}")
        tokenized = tokenize_corpus(text, self.lmax)
        space = SequenceSpace(vocabulary=tokenized.vocabulary, lmax=self.lmax)
        return mle_fit(
            space,
            tokenized.sequences,
            order=self.base_model["order"],
            smoothing=self.base_model["smoothing"],
        )

    def build_constraints(self, space: SequenceSpace) -> ConstraintSet:
        vocab = space.vocabulary
        specs = []
        for i, c in enumerate(self.constraints):
            kind = c["kind"]
            try:
                if kind == "token-presence":
                    feature = TokenPresence(vocab, c["token"], feature_id=c["id"])
                elif kind == "wordlist-presence":
                    feature = WordlistPresence(vocab, c["tokens"], feature_id=c["id"])
                elif kind == "prefix-match":
                    feature = PrefixMatch(vocab, c["tokens"], feature_id=c["id"])
                else:
                    feature = TokenRatio(
                        vocab,
                        c["numerator"],
                        c["denominator"],
                        empty_default=c.get("empty_default", 0.0),
                        feature_id=c["id"],
                    )
                specs.append(
                    ConstraintSpec(
                        feature=feature,
                        target=float(c["target"]),
                        pointwise=c.get("pointwise", False),
                    )
                )
            except ConfigError as e:
                raise ConfigError(f"config.constraints[{i}]: {e}") from None
        return ConstraintSet(specs)

    def build_fit_config(self) -> FitConfig:
        return FitConfig(
            sample_count=self.fit.get("sample_count", 100000),
            sgd=SgdConfig(
                learning_rate=self.fit.get("learning_rate", 0.5),
                seed=self.seed,
            ),
            tolerance=self.fit.get("tolerance", 0.01),
            max_steps=self.fit.get("max_steps", 10000),
            lambda_clamp=self.fit.get("lambda_clamp", DEFAULT_LAMBDA_CLAMP),
        )

    def build_dpg_config(self, adaptivity: str | None = None, seed: int | None = None) -> DpgConfig:
        t = self.trainer
        return DpgConfig(
            iterations=t["iterations"],
            samples_per_iteration=t["samples_per_iteration"],
            learning_rate=t["learning_rate"],
            adaptivity=adaptivity if adaptivity is not None else t.get("adaptivity", "kl"),
            batch_update=t.get("batch_update", True),
            optimizer=t.get("optimizer", "sgd"),
            eval_every=self.eval.get("eval_every", 10),
            seed=seed if seed is not None else self.seed,
            policy_order=t.get("policy_order"),
        )

    def build_baseline_config(self, seed: int | None = None) -> BaselineConfig:
        t = self.trainer
        return BaselineConfig(
            kind=t["method"],
            iterations=t.get("iterations", 0),
            samples_per_iteration=t.get("samples_per_iteration", 1),
            learning_rate=t.get("learning_rate", 0.1),
            beta=t.get("beta"),
            beta_adaptive=t.get("beta_adaptive", False),
            kl_target=t.get("kl_target"),
            beta_step=t.get("beta_step", 0.1),
            eval_every=self.eval.get("eval_every", 10),
            seed=seed if seed is not None else self.seed,
            policy_order=t.get("policy_order"),
            sample_budget=t.get("sample_budget"),
            fit_order=t.get("fit_order"),
            fit_smoothing=t.get("fit_smoothing", 1.0),
        )

    def build_eval_options(self) -> EvalOptions:
        return EvalOptions(
            sample_size=self.eval.get("sample_size", 1024),
            exact=self.eval.get("exact_oracle", False),
        )

"""HTTP scoring service: fit a scorer once, score patterns from any client.

Fitting is the expensive phase; scoring a query is cheap and the fitted
state is immutable, so the natural deployment is a long-running process
holding named scorers that concurrent clients query. Patterns travel as the
same little-endian hex used by the pattern-exchange file.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .bound import FittedScorer, fit, load_scorer, score_batch
from .kernel import make_weighting
from .patterns import ActivationPattern, PatternFileError, build_region_index, read_patterns

__all__ = ["create_app", "app"]


class PatternRecordIn(BaseModel):
    pattern: str = Field(description="little-endian hex, ceil(m/8) bytes")
    error: float = Field(ge=0.0, le=1.0)


class FitRequest(BaseModel):
    scorer_id: str = Field(min_length=1, max_length=128)
    scorer_path: str | None = Field(default=None, description="load a saved scorer file")
    patterns_path: str | None = Field(default=None, description="fit from a pattern file")
    records: list[PatternRecordIn] | None = Field(default=None, description="fit inline")
    m: int | None = Field(default=None, ge=0, description="bit width for inline records")
    rho: float | str | None = Field(default=None, description="kernel width; 'inf' for uniform")
    delta: float = Field(default=0.001, gt=0.0, le=1.0)


class ScorerInfo(BaseModel):
    scorer_id: str
    m: int
    n_samples: int
    n_regions: int
    rho: str
    delta: float


class ScoreRequest(BaseModel):
    patterns: list[str] = Field(min_length=1, description="hex-encoded query patterns")


class ScoreItem(BaseModel):
    pattern: str
    log_bound: float
    smooth_error: float
    log_density: float
    gap: float


class ScoreResponse(BaseModel):
    scorer_id: str
    count: int
    scores: list[ScoreItem]


class HealthResponse(BaseModel):
    status: str
    version: str
    scorers: int


def _parse_rho(raw: float | str | None) -> float:
    if raw is None:
        raise HTTPException(422, "rho is required when fitting")
    try:
        rho = float(raw)
    except (TypeError, ValueError):
        raise HTTPException(422, f"bad rho {raw!r}")
    if math.isnan(rho) or rho <= 0:
        raise HTTPException(422, f"rho must be positive or inf, got {raw!r}")
    return rho


def _build_scorer(req: FitRequest) -> FittedScorer:
    sources = [req.scorer_path, req.patterns_path, req.records]
    if sum(s is not None for s in sources) != 1:
        raise HTTPException(
            422, "give exactly one of scorer_path, patterns_path or records"
        )
    if req.scorer_path is not None:
        try:
            return load_scorer(req.scorer_path)
        except (OSError, ValueError) as exc:
            raise HTTPException(400, f"cannot load scorer: {exc}")
    if req.patterns_path is not None:
        try:
            records = read_patterns(req.patterns_path)
        except (OSError, PatternFileError) as exc:
            raise HTTPException(400, f"cannot read patterns: {exc}")
        pairs = [(r.pattern, r.error) for r in records]
    else:
        if req.m is None:
            raise HTTPException(422, "m is required with inline records")
        try:
            pairs = [
                (ActivationPattern.from_hex(r.pattern, req.m), r.error)
                for r in req.records
            ]
        except ValueError as exc:
            raise HTTPException(422, f"bad record: {exc}")
    rho = _parse_rho(req.rho)
    try:
        index = build_region_index(pairs)
        return fit(index, make_weighting(rho, index.m), req.delta)
    except ValueError as exc:
        raise HTTPException(422, str(exc))


def _info(scorer_id: str, scorer: FittedScorer) -> ScorerInfo:
    return ScorerInfo(
        scorer_id=scorer_id,
        m=scorer.m,
        n_samples=scorer.n_total,
        n_regions=len(scorer.counts),
        rho=f"{scorer.spec.rho:.17g}",
        delta=scorer.delta,
    )


def create_app(preload: dict[str, str] | None = None) -> FastAPI:
    app = FastAPI(
        title="subfn scoring service",
        version=__version__,
        description="Unreliability scores for activation patterns of ReLU networks.",
    )
    registry: dict[str, FittedScorer] = {}
    lock = threading.Lock()

    for name, path in (preload or {}).items():
        registry[name] = load_scorer(path)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__, scorers=len(registry))

    @app.get("/scorers", response_model=list[ScorerInfo])
    def list_scorers() -> list[ScorerInfo]:
        with lock:
            return [_info(sid, s) for sid, s in sorted(registry.items())]

    @app.post("/scorers", response_model=ScorerInfo, status_code=201)
    def add_scorer(req: FitRequest) -> ScorerInfo:
        scorer = _build_scorer(req)
        with lock:
            if req.scorer_id in registry:
                raise HTTPException(409, f"scorer {req.scorer_id!r} already exists")
            registry[req.scorer_id] = scorer
        return _info(req.scorer_id, scorer)

    def _get(scorer_id: str) -> FittedScorer:
        with lock:
            scorer = registry.get(scorer_id)
        if scorer is None:
            raise HTTPException(404, f"no scorer {scorer_id!r}")
        return scorer

    @app.get("/scorers/{scorer_id}", response_model=ScorerInfo)
    def get_scorer(scorer_id: str) -> ScorerInfo:
        return _info(scorer_id, _get(scorer_id))

    @app.delete("/scorers/{scorer_id}", status_code=204)
    def delete_scorer(scorer_id: str) -> None:
        with lock:
            if scorer_id not in registry:
                raise HTTPException(404, f"no scorer {scorer_id!r}")
            del registry[scorer_id]

    @app.post("/scorers/{scorer_id}/score", response_model=ScoreResponse)
    def score_patterns(scorer_id: str, req: ScoreRequest) -> ScoreResponse:
        scorer = _get(scorer_id)
        try:
            queries = [ActivationPattern.from_hex(h, scorer.m) for h in req.patterns]
        except ValueError as exc:
            raise HTTPException(422, f"bad query pattern: {exc}")
        out = score_batch(scorer, queries)
        items = [
            ScoreItem(
                pattern=h,
                log_bound=float(lb),
                smooth_error=float(np.exp(ls)),
                log_density=float(ld),
                gap=float(np.exp(lg)),
            )
            for h, lb, ls, ld, lg in zip(
                req.patterns,
                out["log_bound"],
                out["log_smooth"],
                out["log_density"],
                out["log_gap"],
            )
        ]
        return ScoreResponse(scorer_id=scorer_id, count=len(items), scores=items)

    return app


app = create_app()

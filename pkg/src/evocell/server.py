"""HTTP state and control surface over a run directory.

Read endpoints serve immutable snapshots (the checkpoint documents on disk);
the control endpoint writes the intervention mailbox that the engine consumes
at its next generation boundary. Bodies reuse the exact documents the engine
persists, so the dashboard never recomputes engine-owned numbers.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .compiler import mac_count
from .control import set_key_name, set_torques, presence_ratios, ALL_SET_KEYS
from .engine import EngineState, Intervention, load_run, write_mailbox
from .errors import CorruptCheckpoint, EvoCellError
from .genome import KIND_ORDER, to_doc as genome_to_doc


class HistoryRowView(BaseModel):
    generation: int
    phase: int
    best: float
    mean: float
    worst: float


class IndividualView(BaseModel):
    digest: str
    fitness: float | None
    params: int
    depth: int
    born_gen: int
    op_trace: str
    parent_digests: list[str]


class RunView(BaseModel):
    generation: int
    phase: int
    paused: bool
    stopped: bool
    best: IndividualView | None
    history: list[HistoryRowView]


class StatView(BaseModel):
    mean: float
    n_obs: int


class TablesView(BaseModel):
    kinds: list[str]
    presence: dict[str, StatView]
    torque: dict[str, StatView]


class GenomeView(BaseModel):
    digest: str
    genome: dict
    params: int
    macs: int
    blocks: int
    fitness: float | None
    born_gen: int
    op_trace: str
    presence_contrib: dict[str, float] | None
    torque_contrib: dict[str, float] | None


class TopView(BaseModel):
    top: list[IndividualView]


class ControlRequest(BaseModel):
    type: str
    digests: list[str] = Field(default_factory=list)
    reschedule_channels: bool = False


class ControlAccepted(BaseModel):
    status: str
    type: str


def _individual_view(ind) -> IndividualView:
    return IndividualView(
        digest=ind.digest,
        fitness=ind.fitness,
        params=ind.params,
        depth=len(ind.genome),
        born_gen=ind.born_gen,
        op_trace=ind.op_trace,
        parent_digests=list(ind.parent_digests),
    )


def create_app(run_dir: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    run_dir = Path(run_dir)
    app = FastAPI(title="evocell", version="0.1.0")

    def snapshot() -> EngineState:
        try:
            return load_run(run_dir)
        except CorruptCheckpoint as exc:
            # Mid-write on a filesystem without atomic rename, or an empty dir.
            raise HTTPException(status_code=503, detail=str(exc)) from exc

    @app.get("/api/run", response_model=RunView)
    def get_run() -> RunView:
        state = snapshot()
        best = state.best()
        return RunView(
            generation=state.generation,
            phase=state.phase,
            paused=state.paused,
            stopped=state.stopped,
            best=_individual_view(best) if best else None,
            history=[HistoryRowView(**row.to_doc()) for row in state.history],
        )

    @app.get("/api/generations/{number}")
    def get_generation(number: int) -> dict:
        path = run_dir / f"gen_{number:04d}.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no checkpoint for generation {number}")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc

    @app.get("/api/genomes/{digest}", response_model=GenomeView)
    def get_genome(digest: str) -> GenomeView:
        state = snapshot()
        lookup = {ind.digest: ind for ind in state.population}
        lookup.update({ind.digest: ind for ind in state.archive})
        ind = lookup.get(digest)
        if ind is None:
            raise HTTPException(status_code=404, detail=f"unknown digest {digest}")
        net = state.describe(ind.genome)
        if ind.fitness is not None:
            presence = {k.value: v for k, v in presence_ratios(ind.genome, ind.fitness).items()}
            torque = {set_key_name(k): v for k, v in set_torques(ind.genome, ind.fitness).items()}
        else:
            presence = None
            torque = None
        return GenomeView(
            digest=ind.digest,
            genome=genome_to_doc(ind.genome),
            params=net.param_count,
            macs=mac_count(net),
            blocks=len(ind.genome),
            fitness=ind.fitness,
            born_gen=ind.born_gen,
            op_trace=ind.op_trace,
            presence_contrib=presence,
            torque_contrib=torque,
        )

    @app.get("/api/tables", response_model=TablesView)
    def get_tables() -> TablesView:
        state = snapshot()
        presence = {}
        for kind in KIND_ORDER:
            stat = state.tables.presence.get(kind)
            presence[kind.value] = StatView(mean=stat.mean if stat else 0.0,
                                            n_obs=stat.n_obs if stat else 0)
        torque = {}
        for key in ALL_SET_KEYS:
            stat = state.tables.torque.get(key)
            torque[set_key_name(key)] = StatView(mean=stat.mean if stat else 0.0,
                                                 n_obs=stat.n_obs if stat else 0)
        return TablesView(
            kinds=[k.value for k in KIND_ORDER],
            presence=presence,
            torque=torque,
        )

    @app.get("/api/top", response_model=TopView)
    def get_top(k: int = 20) -> TopView:
        state = snapshot()
        return TopView(top=[_individual_view(ind) for ind in state.archive[:k]])

    @app.post("/api/control", response_model=ControlAccepted, status_code=202)
    def post_control(request: ControlRequest) -> ControlAccepted:
        if request.type not in ("Pause", "Resume", "Stop", "HandPick"):
            raise HTTPException(status_code=400, detail=f"unknown intervention {request.type!r}")
        state = snapshot()
        if request.type == "HandPick":
            if not request.digests:
                raise HTTPException(status_code=400, detail="HandPick requires digests")
            known = {ind.digest for ind in state.population}
            known.update(ind.digest for ind in state.archive)
            missing = [d for d in request.digests if d not in known]
            if missing:
                raise HTTPException(status_code=404, detail=f"unknown digests: {missing}")
            if request.reschedule_channels and state.phase == 2:
                raise HTTPException(
                    status_code=409,
                    detail="channel rescheduling is allowed only once, entering phase 2",
                )
        try:
            write_mailbox(run_dir, Intervention(
                type=request.type,
                digests=tuple(request.digests),
                reschedule_channels=request.reschedule_channels,
            ))
        except EvoCellError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return ControlAccepted(status="queued", type=request.type)

    if ui_dir is not None:
        ui_dir = Path(ui_dir)
        if ui_dir.is_dir():
            from fastapi.staticfiles import StaticFiles

            app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

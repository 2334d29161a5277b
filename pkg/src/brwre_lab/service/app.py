"""Route implementations: one core call per endpoint, dict responses.

Floats that JSON cannot carry (infinities) are rendered as the string
"inf" on the way out; everything else is returned as plain numbers.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..brw_sim import DEFAULT_CAP, estimate_mn_direct
from ..environment import (
    environment_from_dict,
    distribution_from_dict,
    sample_environment,
)
from ..errors import LabError, ParameterError
from ..experiments import SCHEMA_VERSION, ExperimentConfig, run_experiment
from ..pam_solver import solve_m1, solve_mn_recursive
from ..skeleton_fk import estimate_mn_fk
from ..trees import catalan, enumerate_numberings, enumerate_trees, term_index
from ..variational import solve_chi
from .schemas import (
    ChiSolveRequest,
    ChiTableRequest,
    EnvSampleRequest,
    EnvValidateRequest,
    PdeSolveRequest,
    SimulateDirectRequest,
    SimulateFkRequest,
    TreesEnumRequest,
)


def _rho_out(rho: float):
    return "inf" if math.isinf(rho) else rho


def _chi_payload(res) -> dict:
    return {
        "chi": res.chi,
        "rho": _rho_out(res.rho),
        "window": res.M,
        "argmin": None if res.argmin is None else [float(w) for w in res.argmin.weights],
        "iterations": res.iterations,
        "status": res.status,
        "drift_at_wider_window": res.drift,
    }


def create_app() -> FastAPI:
    app = FastAPI(title="brwre-lab", version=__version__)

    @app.exception_handler(LabError)
    async def _lab_error(request: Request, exc: LabError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"error": {"type": type(exc).__name__, "message": str(exc)}},
        )

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "schema_version": SCHEMA_VERSION,
        }

    @app.post("/env/sample")
    def env_sample(req: EnvSampleRequest) -> dict:
        env = sample_environment(
            distribution_from_dict(req.dist0),
            distribution_from_dict(req.dist2),
            d=req.d,
            R=req.R,
            boundary=req.boundary,
            seed=req.seed,
        )
        return env.to_dict()

    @app.post("/env/validate")
    def env_validate(req: EnvValidateRequest) -> dict:
        env = environment_from_dict(req.env)
        return {
            "env": env.to_dict(),
            "nsites": env.nsites,
            "max_abs_xi": env.max_abs_xi,
        }

    @app.post("/trees/enum")
    def trees_enum(req: TreesEnumRequest) -> dict:
        trees = enumerate_trees(req.k)
        items = []
        total = 0
        for tree in trees:
            numberings = enumerate_numberings(tree)
            total += len(numberings)
            item = {"encoding": tree.encoding, "numbering_count": len(numberings)}
            if req.numberings:
                item["numberings"] = [list(nb.labels) for nb in numberings]
            items.append(item)
        return {
            "k": req.k,
            "count": len(trees),
            "catalan": catalan(req.k),
            "total_numberings": total,
            "trees": items,
        }

    @app.post("/chi/solve")
    def chi_solve(req: ChiSolveRequest) -> dict:
        res = solve_chi(
            req.rho_value(),
            M=req.window,
            tol=req.tol,
            restarts=req.restarts,
            seed=req.seed,
            window_check=req.window_check,
        )
        return _chi_payload(res)

    @app.post("/chi/table")
    def chi_table(req: ChiTableRequest) -> dict:
        rows = []
        for rho in req.rho_values():
            res = solve_chi(
                rho,
                M=req.window,
                tol=req.tol,
                restarts=req.restarts,
                seed=req.seed,
                window_check=req.window_check,
            )
            row = _chi_payload(res)
            del row["argmin"]  # tabular output: scalars only
            rows.append(row)
        return {"window": req.window, "rows": rows}

    @app.post("/simulate/direct")
    def simulate_direct(req: SimulateDirectRequest) -> dict:
        est = estimate_mn_direct(
            environment_from_dict(req.env),
            tuple(req.x),
            req.t,
            req.n,
            req.samples,
            seed=req.seed,
            kappa=req.kappa,
            cap=DEFAULT_CAP if req.cap is None else req.cap,
            y=None if req.y is None else tuple(req.y),
            threads=req.threads,
        )
        attempted = est.samples + est.capped
        return {
            "order": est.order,
            "t": est.t,
            "estimate": est.estimate,
            "stderr": est.stderr,
            "samples": est.samples,
            "capped_fraction": est.capped / attempted if attempted else 0.0,
            "y": est.y,
        }

    @app.post("/simulate/fk")
    def simulate_fk(req: SimulateFkRequest) -> dict:
        est = estimate_mn_fk(
            environment_from_dict(req.env),
            tuple(req.x),
            req.t,
            req.n,
            req.samples,
            seed=req.seed,
            kappa=req.kappa,
            y=None if req.y is None else tuple(req.y),
            warp_a=req.warp_a,
            threads=req.threads,
        )
        index = term_index(req.n)
        terms = []
        for (k, tree, numbering), phi, c in zip(index, est.terms, est.coefficients):
            terms.append(
                {
                    "k": k,
                    "tree": tree.encoding,
                    "numbering": list(numbering.labels),
                    "c_kn": c,
                    "phi_hat": phi.value,
                    "stderr": phi.stderr,
                    "samples": phi.samples,
                }
            )
        return {
            "order": est.order,
            "t": est.t,
            "estimate": est.estimate,
            "stderr": est.stderr,
            "y": est.y,
            "terms": terms,
        }

    @app.post("/pde/solve")
    def pde_solve(req: PdeSolveRequest) -> dict:
        env = environment_from_dict(req.env)
        y = None if req.y is None else tuple(req.y)
        method = req.method or ("expm" if req.n == 1 else "rk4")
        if req.n == 1:
            field = solve_m1(
                env, req.kappa, req.times, init=req.init, y=y, method=method
            )
        else:
            if method == "expm":
                raise ParameterError(
                    "matrix-exponential solving covers order 1 only; "
                    "higher orders integrate with rk4"
                )
            field = solve_mn_recursive(
                env, req.kappa, req.times, req.n, init=req.init, y=y
            )[req.n - 1]
        final = field.final()
        return {
            "order": field.order,
            "init": field.init,
            "y": field.y,
            "method": field.method,
            "times": [float(t) for t in field.times],
            "sites": [list(s) for s in env.sites()],
            "values": field.values.tolist(),
            "summary": {
                "final_time": float(field.times[-1]),
                "min": float(final.min()),
                "max": float(final.max()),
                "mean": float(final.mean()),
                "total": float(final.sum()),
            },
        }

    @app.post("/experiment/run")
    def experiment_run(cfg: ExperimentConfig) -> dict:
        return run_experiment(cfg).model_dump()

    return app

# app.py
# JSON web API around the solver

import logging

from flask import Flask, jsonify, request

import config as settings
from config import LpqpConfig
from core.errors import LpqpError
from core.score import score
from instances import generate_potts, model_from_dict, model_to_dict
from lpqp import lpqp_run

logger = logging.getLogger(__name__)

app = Flask(__name__)

# Requests above this many joint-label entries are refused
MAX_LABELS = 100_000


def _error(message, status=400):
    return jsonify({"success": False, "error": message}), status


# ==================== ROUTES ====================

@app.route('/api/health')
def health():
    """Liveness probe"""
    return jsonify({"success": True, "status": "ok"})


@app.route('/api/solve', methods=['POST'])
def solve():
    """
    Solve a native-format model.

    Body: {"model": {...native model...}, "config": {...LpqpConfig fields...}}
    """
    try:
        data = request.get_json(silent=True) or {}
        if "model" not in data:
            return _error("request body needs a 'model' object")
        model = model_from_dict(data["model"])
        if sum(model.cardinalities) + sum(e.table.size for e in model.edges) > MAX_LABELS:
            return _error("model is too large for the web API; use the command line")
        cfg = LpqpConfig.from_dict(data.get("config") or {})

        result = lpqp_run(model, cfg)
        return jsonify({
            "success": True,
            "assignment": list(result.rounded.labels),
            "energy": result.rounded_energy,
            "status": result.status,
            "summary": result.summary(model),
            "config": result.config.to_dict(),
        })
    except (LpqpError, TypeError) as e:
        logger.info("rejected solve request: %s", e)
        return _error(str(e))


@app.route('/api/generate-potts', methods=['POST'])
def generate():
    """Random Potts grid in native format. Body: {"size", "states", "sigma", "seed"}"""
    try:
        data = request.get_json(silent=True) or {}
        model = generate_potts(int(data.get("size", 3)), int(data.get("states", 2)),
                               float(data.get("sigma", 0.5)), int(data.get("seed", 0)))
        return jsonify({"success": True, "model": model_to_dict(model)})
    except (LpqpError, TypeError, ValueError) as e:
        return _error(str(e))


@app.route('/api/score', methods=['POST'])
def score_energies():
    """Body: {"energies": [...], "optimum": optional}"""
    try:
        data = request.get_json(silent=True) or {}
        energies = [float(e) for e in data.get("energies", [])]
        optimum = data.get("optimum")
        report = score(energies, None if optimum is None else float(optimum))
        return jsonify({"success": True, **report.to_dict()})
    except (LpqpError, TypeError, ValueError) as e:
        return _error(str(e))


if __name__ == '__main__':
    logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL, logging.WARNING))
    app.run(host='0.0.0.0', port=settings.PORT)

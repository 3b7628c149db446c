from flask import Flask, jsonify, request
import logging
from werkzeug.exceptions import HTTPException

from backend import __version__, config
from backend.errors import CriterionNotViolated, QngError
from backend.photon_number_models import gaussian_oracle_grid
from backend.qng_criteria import (
    PairClickStats,
    PhotonNumberStats,
    pair_depth,
    pair_threshold,
    pair_violation,
    poisson_pair_boundary,
    sps_depth,
)

logger = logging.getLogger(__name__)

MAX_ORACLE_POINTS = 10_000

app = Flask(__name__)


@app.errorhandler(QngError)
def handle_qng_error(exc):
    return jsonify({'error': str(exc)}), 400


@app.errorhandler(Exception)
def handle_unexpected(exc):
    if isinstance(exc, HTTPException):
        return jsonify({'error': exc.description}), exc.code
    logger.exception("unhandled error")
    return jsonify({'error': 'Internal server error'}), 500


def _json_body():
    data = request.get_json(silent=True)
    if not isinstance(data, dict) or not data:
        return None
    return data


@app.route('/')
def home():
    return jsonify({
        'message': 'QNG certification API',
        'status': 'running',
        'version': __version__
    })


@app.route('/health')
def health():
    return jsonify({'status': 'healthy'})


@app.route('/api/certify/pairs', methods=['POST'])
def certify_pairs():
    data = _json_body()
    if data is None:
        return jsonify({'error': 'Missing JSON body with ps and pe'}), 400
    stats = PairClickStats.from_dict(data)
    try:
        report = pair_depth(stats)
    except CriterionNotViolated:
        report = pair_violation(stats)
    return jsonify(report.to_dict())


@app.route('/api/certify/sps', methods=['POST'])
def certify_sps():
    data = _json_body()
    if data is None:
        return jsonify({'error': 'Missing JSON body with p1 and p2plus'}), 400
    stats = PhotonNumberStats.from_dict(data)
    return jsonify({'stats': stats.to_dict(), 'depth': sps_depth(stats).to_dict()})


@app.route('/api/threshold', methods=['GET'])
def threshold():
    raw = request.args.get('pe')
    if raw is None:
        return jsonify({'error': 'Missing query parameter pe'}), 400
    try:
        pe = float(raw)
    except ValueError:
        return jsonify({'error': 'pe must be a number'}), 400
    return jsonify({
        'pe': pe,
        'threshold': pair_threshold(pe),
        'poisson_boundary': poisson_pair_boundary(pe)
    })


@app.route('/api/oracle', methods=['POST'])
def oracle():
    data = _json_body()
    if data is None:
        return jsonify({'error': 'Missing JSON body with mus, modes, etas, darks'}), 400
    try:
        mus = [float(v) for v in data['mus']]
        modes = [int(v) for v in data['modes']]
        etas = [float(v) for v in data['etas']]
        darks = [float(v) for v in data.get('darks', [0.0])]
    except (KeyError, TypeError, ValueError):
        return jsonify({'error': 'mus, modes and etas must be lists of numbers'}), 400

    size = len(mus) * len(modes) * len(etas) * len(darks)
    if size == 0:
        return jsonify({'error': 'Empty grid'}), 400
    if size > MAX_ORACLE_POINTS:
        return jsonify({'error': f'Grid too large ({size} > {MAX_ORACLE_POINTS} points)'}), 400

    rows = gaussian_oracle_grid(mus, modes, etas, darks,
                                data.get('convention', 'detector_pair'),
                                data.get('aggregation', 'mean'))
    return jsonify({'rows': [row.to_dict() for row in rows]})


if __name__ == '__main__':
    config.configure_logging()
    app.run(host='0.0.0.0', port=config.PORT, debug=config.FLASK_ENV == 'development')

from dataclasses import asdict

from flask import Flask, request, jsonify
from flask_cors import CORS
import numpy as np

import settings
from channel import FrameParams, make_frame, make_rng, snr_db_to_noise_var
from harness import (CodeSetup, CodeSpec, complexity_report, config_from_mapping, load_code,
                     parse_bool, parse_code_spec, run_sweep)
from ldpc import count_parity_inequalities, gallager_construct, load_alist, save_alist, systematize
from receivers import CODED_RECEIVERS, RECEIVER_IDS, ReceiverSettings, run_receiver

app = Flask(__name__)
CORS(app)

# Logging
settings.configure_logging(app.logger, log_name='api.log')
app.logger.info('Relay LP API startup')


def _request_code(data):
    """Code for a request: inline alist text, or a spec string (no file paths)"""
    if data.get('alist'):
        H = load_alist(data['alist'])
        return CodeSetup(spec=CodeSpec(kind="alist", length=H.n_cols, path="request.alist"),
                         H=H, encoder=systematize(H))
    spec = parse_code_spec(data.get('code_spec', 'uncoded N=20'))
    if spec.kind == "alist":
        raise ValueError("alist paths are not accepted; send the alist text in 'alist'")
    return load_code(spec, int(data.get('code_seed', 7)))


# API Routes
@app.route('/api/health', methods=['GET'])
def health():
    return jsonify({"status": "healthy", "message": "Relay LP API is running"})

@app.route('/api/receivers', methods=['GET'])
def get_receivers():
    receivers = [{"id": r, "coded": r in CODED_RECEIVERS} for r in RECEIVER_IDS]
    return jsonify({"success": True, "count": len(receivers), "receivers": receivers})

@app.route('/api/complexity', methods=['GET'])
def get_complexity():
    try:
        lengths = request.args.get('lengths', default='256,512,1024')
        code_seed = request.args.get('code_seed', default=7, type=int)
        specs = [CodeSpec(kind="gallager", length=int(n)) for n in lengths.split(',') if n.strip()]
        if not specs:
            return jsonify({"success": False, "error": "No code lengths given"}), 400
        rows = complexity_report(specs, code_seed=code_seed)
        return jsonify({"success": True, "rows": [asdict(row) for row in rows]})
    except ValueError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except Exception as e:
        app.logger.error(f"Error building complexity report: {e}")
        return jsonify({"success": False, "error": str(e)}), 500

@app.route('/api/codes', methods=['POST'])
def create_code():
    try:
        data = request.get_json() or {}
        if 'n' not in data:
            return jsonify({"success": False, "error": "Missing required field: n"}), 400
        H = gallager_construct(int(data['n']), int(data.get('col_weight', 3)),
                               int(data.get('row_weight', 6)), int(data.get('seed', 7)))
        return jsonify({
            "success": True,
            "n": H.n_cols,
            "checks": H.n_rows,
            "parity_inequalities": count_parity_inequalities(H),
            "alist": save_alist(H),
        })
    except ValueError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except Exception as e:
        app.logger.error(f"Error constructing code: {e}")
        return jsonify({"success": False, "error": str(e)}), 500

@app.route('/api/decode', methods=['POST'])
def decode_frame():
    try:
        data = request.get_json() or {}
        if 'receiver' not in data or 'snr_db' not in data:
            return jsonify({"success": False, "error": "Missing required fields"}), 400
        code = _request_code(data)
        sigma1_sq = float(data.get('sigma1_sq', 0.5))
        params = FrameParams(noise_var=snr_db_to_noise_var(float(data['snr_db']), sigma1_sq),
                             sigma1_sq=sigma1_sq, sigma2_sq=float(data.get('sigma2_sq', 1.0)),
                             n_symbols=code.n_symbols)
        frame = make_frame(code.encoder, make_rng(int(data.get('seed', settings.DEFAULT_SEED)), 0), params)
        receiver_settings = ReceiverSettings(
            lambda_t=float(data.get('lambda_t', 1.0)),
            lambda_tau=float(data.get('lambda_tau', 1.0)),
            round_limit=int(data.get('round_limit', 100)),
            cut_on_hard_decision=parse_bool(data.get('cut_on_hard_decision', False)),
        )
        report = run_receiver(data['receiver'], frame, code.H, receiver_settings)
        return jsonify({
            "success": True,
            "tx_bits": "".join(str(int(b)) for b in frame.tx_bits),
            "bit_errors": int(np.count_nonzero(report.decoded_bits != frame.tx_bits)),
            "report": report.as_dict(),
        })
    except ValueError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except Exception as e:
        app.logger.error(f"Error decoding frame: {e}")
        return jsonify({"success": False, "error": str(e)}), 500

@app.route('/api/sweep', methods=['POST'])
def sweep():
    try:
        data = request.get_json() or {}
        frames = int(data.get('frames_per_point', settings.API_MAX_FRAMES))
        if frames > settings.API_MAX_FRAMES:
            return jsonify({"success": False,
                            "error": f"frames_per_point must be at most {settings.API_MAX_FRAMES}"}), 400
        spec = parse_code_spec(data.get('code_spec', 'uncoded N=20'))
        if spec.kind == "alist":
            return jsonify({"success": False, "error": "alist paths are not accepted"}), 400
        config = config_from_mapping({**data, 'frames_per_point': frames})
        result = run_sweep(config)
        rows = list(result.rows())
        return jsonify({"success": True, "count": len(rows), "rows": rows})
    except ValueError as e:
        return jsonify({"success": False, "error": str(e)}), 400
    except Exception as e:
        app.logger.error(f"Error running sweep: {e}")
        return jsonify({"success": False, "error": str(e)}), 500

if __name__ == '__main__':
    app.run(debug=True, host='0.0.0.0', port=5000)

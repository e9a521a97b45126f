import csv
import io
import json
import logging
import math
import os
import tempfile

import numpy as np

logger = logging.getLogger(__name__)


class IoUtils:
    """CSV/JSON artifacts: LF line endings, 17 significant digits, written atomically"""

    @staticmethod
    def format_real(value):
        return format(float(value), ".17g")

    @staticmethod
    def atomic_write(path, text):
        """Write to a temp file in the target directory, then rename over path"""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", suffix=os.path.basename(path), dir=directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        logger.debug(f"💾 Wrote {path}")

    @staticmethod
    def write_csv(path, header, rows):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        IoUtils.atomic_write(path, buffer.getvalue())

    @staticmethod
    def _json_safe(value):
        if isinstance(value, dict):
            return {str(k): IoUtils._json_safe(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [IoUtils._json_safe(v) for v in value]
        if isinstance(value, np.ndarray):
            return IoUtils._json_safe(value.tolist())
        if isinstance(value, np.generic):
            value = value.item()
        if isinstance(value, float) and not math.isfinite(value):
            return None
        return value

    @staticmethod
    def write_json(path, data):
        text = json.dumps(IoUtils._json_safe(data), indent=2, sort_keys=True, allow_nan=False)
        IoUtils.atomic_write(path, text + "\n")

    @staticmethod
    def read_csv(path):
        """(header, rows) of a CSV artifact, all fields as strings"""
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            return header, list(reader)

    @staticmethod
    def trajectory_header(nx, nu):
        return ["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]

    @staticmethod
    def write_trajectory(path, ocp, traj):
        """T+1 rows; the final row has empty control fields"""
        fmt = IoUtils.format_real
        times = ocp.base_time + ocp.dt * np.arange(ocp.horizon + 1)
        rows = []
        for k in range(ocp.horizon + 1):
            controls = [fmt(u) for u in traj.us[k]] if k < ocp.horizon else [""] * ocp.nu
            rows.append([fmt(times[k])] + [fmt(x) for x in traj.xs[k]] + controls)
        IoUtils.write_csv(path, IoUtils.trajectory_header(ocp.nx, ocp.nu), rows)

    @staticmethod
    def write_convergence(path, result):
        fmt = IoUtils.format_real
        rows = [[str(i), fmt(rec.cost), fmt(rec.grad_norm), fmt(rec.wall_time)]
                for i, rec in enumerate(result.per_iter_log, start=1)]
        IoUtils.write_csv(path, ["iter", "cost", "grad_norm", "wall_time_s"], rows)

    @staticmethod
    def write_mpc_log(path, log):
        fmt = IoUtils.format_real
        nx, nu = log.x.shape[1], log.u.shape[1]
        header = (["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
                  + ["running_cost", "ee_err", "grad_norm", "solve_time_s", "iters"])
        rows = []
        for k in range(len(log)):
            rows.append([fmt(log.t[k])] + [fmt(v) for v in log.x[k]] + [fmt(v) for v in log.u[k]]
                        + [fmt(log.running_cost[k]), fmt(log.ee_error[k]), fmt(log.grad_norm[k]),
                           fmt(log.solve_time[k]), str(int(log.iterations[k]))])
        IoUtils.write_csv(path, header, rows)

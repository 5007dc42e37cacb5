"""
SVG 그림: 지름 누적 곡선, GT-예측 크기 산점도

같은 입력이면 같은 바이트가 나오도록 svg.hashsalt를 고정하고 Date 메타데이터를 뺀다.
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger('lesioneval')

SVG_RC = {
    'svg.hashsalt': 'lesioneval',
    'svg.fonttype': 'path',
    'font.family': 'DejaVu Sans',
}


def _nan(values):
    return np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)


def _save(figure, path) -> Path:
    path = Path(path)
    figure.savefig(path, format='svg', metadata={'Date': None})
    plt.close(figure)
    logger.debug(f"그림 저장: {path}")
    return path


def plot_curves(points, path) -> Path:
    """임계값 이상 병변의 민감도, FP/case, 평균 DICE (정의되지 않은 점은 비움)"""
    thresholds = [p.threshold_mm for p in points]
    panels = [
        ('Sensitivity', _nan(p.sensitivity for p in points)),
        ('FP/case', _nan(p.fp_per_case for p in points)),
        ('Mean DICE', _nan(p.mean_dice for p in points)),
    ]
    with plt.rc_context(SVG_RC):
        figure, axes = plt.subplots(1, 3, figsize=(12, 3.6))
        for axis, (label, values) in zip(axes, panels):
            axis.plot(thresholds, values, marker='o', color='#1f4e79')
            axis.set_xlabel('Lesion diameter ≥ threshold [mm]')
            axis.set_ylabel(label)
            axis.grid(True, alpha=0.3)
        axes[0].set_ylim(-0.02, 1.02)
        axes[2].set_ylim(-0.02, 1.02)
        figure.tight_layout()
        return _save(figure, path)


def plot_scatter(rows, rho_diameter: float, rho_volume: float, path) -> Path:
    """x: 예측 크기, y: GT 크기, 항등선 포함"""
    panels = [
        ('diameter', 'mm', rho_diameter),
        ('volume', 'mm³', rho_volume),
    ]
    with plt.rc_context(SVG_RC):
        figure, axes = plt.subplots(1, 2, figsize=(9, 4.2))
        for axis, (name, unit, rho) in zip(axes, panels):
            key = 'diameter_mm' if name == 'diameter' else 'volume_mm3'
            predicted = np.array([row[f'pred_{key}'] for row in rows], dtype=np.float64)
            truth = np.array([row[f'gt_{key}'] for row in rows], dtype=np.float64)
            upper = float(max(predicted.max(), truth.max())) * 1.05
            axis.plot([0, upper], [0, upper], linestyle='--', color='#888888', linewidth=1)
            axis.scatter(predicted, truth, s=14, color='#1f4e79')
            axis.set_xlim(0, upper)
            axis.set_ylim(0, upper)
            axis.set_xlabel(f'Predicted {name} [{unit}]')
            axis.set_ylabel(f'Ground-truth {name} [{unit}]')
            axis.set_title(f'Spearman ρ = {rho:.2f}')
            axis.grid(True, alpha=0.3)
        figure.tight_layout()
        return _save(figure, path)

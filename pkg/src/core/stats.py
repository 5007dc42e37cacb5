"""
비모수 검정, 순위 상관, 백분위 부트스트랩 신뢰구간

모든 검정은 양측(two-tailed)이며 p-value는 [0, 1]로 잘라낸다.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps

from core.exceptions import (
    ConfigurationError, DegenerateBootstrapError, DegenerateTableError,
    InsufficientDataError, UndefinedCorrelationError,
)

logger = logging.getLogger('lesioneval')

# Mann-Whitney 정확 분포를 쓰는 최대 표본 합
EXACT_MAX_N = 20

DEFAULT_RESAMPLES = 10000
DEFAULT_CONFIDENCE = 0.95
MIN_RESAMPLES = 100
# 통계량이 정의되지 않은 재표본 허용 비율
MAX_UNDEFINED_FRACTION = 0.01
# 재표본 블록 크기 (블록마다 독립 난수 스트림)
BOOTSTRAP_BLOCK = 500
RNG_ALGORITHM = 'PCG64'


@dataclass(frozen=True)
class TestResult:
    """가설 검정 결과"""
    statistic: float
    p_value: float
    method: str
    n: Tuple[int, ...]
    degenerate: bool = False

    __test__ = False  # pytest 수집 대상 아님

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['n'] = list(self.n)
        return data


@dataclass(frozen=True)
class BootstrapCI:
    """점 추정치와 백분위 부트스트랩 구간"""
    point: float
    lower: float
    upper: float
    n_resamples: int
    confidence: float = DEFAULT_CONFIDENCE
    seed: int = 0
    skipped: int = 0
    unit: str = 'lesion'
    rng: str = field(default=RNG_ALGORITHM)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _clip_p(p: float) -> float:
    return float(min(1.0, max(0.0, p)))


def _sample(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(array)):
        raise InsufficientDataError(f"{name}에 유한하지 않은 값이 있습니다.")
    return array


def chi_square_2x2(table, correction: bool = False) -> TestResult:
    """2x2 분할표 Pearson 카이제곱 검정 (자유도 1, 기본은 연속성 보정 없음)"""
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (2, 2):
        raise ConfigurationError(f"2x2 분할표가 아닙니다: shape={table.shape}")
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise ConfigurationError("분할표의 칸은 0 이상의 유한값이어야 합니다.")
    if np.any(table.sum(axis=0) == 0) or np.any(table.sum(axis=1) == 0):
        raise DegenerateTableError(f"분할표의 주변합이 0입니다: {table.tolist()}")

    result = sps.chi2_contingency(table, correction=correction)
    method = 'chi-square (yates)' if correction else 'chi-square'
    return TestResult(
        statistic=float(result.statistic),
        p_value=_clip_p(result.pvalue),
        method=method,
        n=(int(table.sum()),),
    )


def _exact_mwu_p(doubled_ranks: np.ndarray, n_a: int, observed: int) -> float:
    """
    순위 합의 조건부 정확 분포 (동순위 포함)

    doubled_ranks는 2배한 중간 순위(정수). 크기 n_a의 모든 부분집합에 대해
    순위 합 분포를 동적 계획법으로 센다.
    """
    total_sum = int(doubled_ranks.sum())
    counts = np.zeros((n_a + 1, total_sum + 1), dtype=np.float64)
    counts[0, 0] = 1.0
    for taken, rank in enumerate(doubled_ranks, start=1):
        rank = int(rank)
        for k in range(min(taken, n_a), 0, -1):
            counts[k, rank:] += counts[k - 1, :total_sum + 1 - rank]
    distribution = counts[n_a]
    subsets = distribution.sum()
    lower = distribution[:observed + 1].sum() / subsets
    upper = distribution[observed:].sum() / subsets
    return _clip_p(2.0 * min(lower, upper))


def mann_whitney_u(a, b, exact_max_n: int = EXACT_MAX_N, use_continuity: bool = True) -> TestResult:
    """
    Mann-Whitney U 검정

    statistic은 a 표본의 U. |a|+|b| <= exact_max_n이면 정확 분포,
    그보다 크면 동순위 보정 분산과 연속성 보정을 쓴 정규 근사.
    """
    a = _sample(a, 'a')
    b = _sample(b, 'b')
    n_a, n_b = len(a), len(b)
    if n_a < 1 or n_b < 1:
        raise InsufficientDataError(f"두 표본 모두 1개 이상이어야 합니다: ({n_a}, {n_b})")

    pooled = np.concatenate([a, b])
    ranks = sps.rankdata(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2)

    if np.all(pooled == pooled[0]):
        logger.debug("Mann-Whitney: 모든 값이 같아 p=1로 처리")
        return TestResult(u_a, 1.0, 'mann-whitney-u', (n_a, n_b), degenerate=True)

    if n_a + n_b <= exact_max_n:
        doubled = np.rint(ranks * 2).astype(np.int64)
        observed = int(doubled[:n_a].sum())
        p_value = _exact_mwu_p(doubled, n_a, observed)
        return TestResult(u_a, p_value, 'mann-whitney-u (exact)', (n_a, n_b))

    result = sps.mannwhitneyu(
        a, b, alternative='two-sided', method='asymptotic', use_continuity=use_continuity,
    )
    return TestResult(u_a, _clip_p(result.pvalue), 'mann-whitney-u (normal)', (n_a, n_b))


def kruskal_wallis(groups: Sequence) -> TestResult:
    """Kruskal-Wallis H 검정 (동순위 보정, 자유도 k-1)"""
    samples = [_sample(group, f'group[{i}]') for i, group in enumerate(groups)]
    if len(samples) < 2:
        raise InsufficientDataError(f"2개 이상의 그룹이 필요합니다: {len(samples)}")
    if any(len(sample) == 0 for sample in samples):
        raise InsufficientDataError("비어 있는 그룹이 있습니다.")
    sizes = tuple(len(sample) for sample in samples)

    pooled = np.concatenate(samples)
    if np.all(pooled == pooled[0]):
        return TestResult(0.0, 1.0, 'kruskal-wallis', sizes, degenerate=True)

    result = sps.kruskal(*samples)
    return TestResult(float(result.statistic), _clip_p(result.pvalue), 'kruskal-wallis', sizes)


def spearman_rho(x, y) -> TestResult:
    """Spearman 순위 상관 (p는 자유도 n-2의 t 근사)"""
    x = _sample(x, 'x')
    y = _sample(y, 'y')
    if len(x) != len(y):
        raise InsufficientDataError(f"x와 y의 길이가 다릅니다: {len(x)} != {len(y)}")
    if len(x) < 3:
        raise InsufficientDataError(f"Spearman 상관에는 3쌍 이상이 필요합니다: {len(x)}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("순위 분산이 0입니다.")

    result = sps.spearmanr(x, y)
    rho = float(np.clip(result.statistic, -1.0, 1.0))
    p_value = float(result.pvalue)
    if not math.isfinite(p_value):
        p_value = 0.0
    return TestResult(rho, _clip_p(p_value), 'spearman', (len(x),))


def spearman_statistic(pairs: np.ndarray) -> Optional[float]:
    """(n, 2) 배열의 Spearman rho, 정의되지 않으면 None (부트스트랩 reducer용)"""
    if len(pairs) < 3 or np.ptp(pairs[:, 0]) == 0 or np.ptp(pairs[:, 1]) == 0:
        return None
    ranks_x = sps.rankdata(pairs[:, 0])
    ranks_y = sps.rankdata(pairs[:, 1])
    return float(np.clip(np.corrcoef(ranks_x, ranks_y)[0, 1], -1.0, 1.0))


def _canonical_rows(data: np.ndarray) -> np.ndarray:
    """행 순서를 정규화해 입력 순열과 무관한 재표본을 만든다"""
    if data.ndim == 1:
        return np.sort(data, kind='stable')
    flat = data.reshape(len(data), -1)
    order = np.lexsort(flat.T[::-1])
    return data[order]


def _resample_block(data, statistic, seed: int, block: int, size: int):
    generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))
    indices = generator.integers(0, len(data), size=(size, len(data)))
    values = np.empty(size, dtype=np.float64)
    for row, index in enumerate(indices):
        value = statistic(data[index])
        values[row] = np.nan if value is None else value
    return values


def bootstrap_ci(
    data,
    statistic: Callable[[np.ndarray], Optional[float]],
    n_resamples: int = DEFAULT_RESAMPLES,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
    unit: str = 'lesion',
    workers: int = 1,
) -> BootstrapCI:
    """
    비모수 백분위 부트스트랩 신뢰구간

    data의 첫 축(병변 또는 스터디)을 복원 추출한다. 재표본은 BOOTSTRAP_BLOCK개씩
    (seed, 블록 번호)에서 유도한 독립 PCG64 스트림으로 생성되므로 workers 수와 무관하게
    같은 결과가 나온다. statistic이 None이나 NaN을 돌려준 재표본은 건너뛰고 세며
    그 비율이 1%를 넘으면 DegenerateBootstrapError.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) == 0:
        raise InsufficientDataError("부트스트랩 입력이 비어 있습니다.")
    if n_resamples < MIN_RESAMPLES:
        raise ConfigurationError(f"n_resamples는 {MIN_RESAMPLES} 이상이어야 합니다: {n_resamples}")
    if not 0 < confidence < 1:
        raise ConfigurationError(f"confidence는 (0, 1) 범위여야 합니다: {confidence}")

    data = _canonical_rows(data)
    point = statistic(data)
    if point is None or not math.isfinite(point):
        raise InsufficientDataError("점 추정치를 계산할 수 없습니다.")

    blocks = [
        (block, min(BOOTSTRAP_BLOCK, n_resamples - start))
        for block, start in enumerate(range(0, n_resamples, BOOTSTRAP_BLOCK))
    ]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(
                lambda item: _resample_block(data, statistic, seed, *item), blocks
            ))
    else:
        parts = [_resample_block(data, statistic, seed, *item) for item in blocks]
    values = np.concatenate(parts)

    defined = values[np.isfinite(values)]
    skipped = int(len(values) - len(defined))
    if skipped > MAX_UNDEFINED_FRACTION * n_resamples:
        raise DegenerateBootstrapError(
            f"정의되지 않은 재표본이 너무 많습니다: {skipped}/{n_resamples}"
        )
    if skipped:
        logger.warning(f"부트스트랩 재표본 {skipped}개 건너뜀 (unit={unit})")

    alpha = (1.0 - confidence) / 2.0
    lower, upper = np.percentile(defined, [100 * alpha, 100 * (1 - alpha)], method='linear')
    return BootstrapCI(
        point=float(point),
        lower=float(lower),
        upper=float(upper),
        n_resamples=int(n_resamples),
        confidence=float(confidence),
        seed=int(seed),
        skipped=skipped,
        unit=unit,
    )


def mean_statistic(values: np.ndarray) -> Optional[float]:
    if len(values) == 0:
        return None
    return float(np.mean(values))

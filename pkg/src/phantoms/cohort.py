"""
팬텀 코호트 생성

양성/음성 스터디의 GT와 예측 NIfTI 쌍, 그리고 해석적 정답과 기대 TP/FN/FP를 담은
manifest.json을 만든다. 같은 인자와 seed면 같은 바이트가 나온다.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.exceptions import ConfigurationError, PhantomGenerationError
from core.models import SystemLog
from core.utils import write_json
from phantoms.shapes import LesionShape, Perturbation, PhantomSpec, perturb, rasterize, shape_mask
from volumes.nifti import save_volume

logger = logging.getLogger('lesioneval')

MANIFEST_NAME = 'manifest.json'
SCHEMA_VERSION = '1.0'
# 각 크기 층을 하나 이상 채우는 지름 (mm)
STRATUM_DIAMETERS_MM = (1.5, 3.0, 6.0)
MAX_PLACEMENT_ATTEMPTS = 500


@dataclass
class CohortParams:
    """generate_cohort 인자"""
    n_positive: int = 101
    n_negative: int = 41
    n_lesions: Optional[int] = None
    n_missed: int = 0
    n_false_positives: int = 0
    seed: int = 0
    dims: Tuple[int, int, int] = (48, 48, 48)
    spacing: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    diameter_median_mm: float = 3.0
    diameter_sigma: float = 0.5
    min_diameter_mm: float = 1.0
    max_diameter_mm: float = 8.0
    ellipsoid_fraction: float = 0.3
    fp_diameter_mm: Tuple[float, float] = (1.0, 3.0)
    steps: int = 0
    offset_mm: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    cover_strata: bool = True
    workers: int = 1

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.offset_mm = tuple(float(o) for o in self.offset_mm)
        self.fp_diameter_mm = tuple(float(d) for d in self.fp_diameter_mm)
        if self.n_lesions is None:
            self.n_lesions = self.n_positive

    def validate(self):
        if self.n_positive < 0 or self.n_negative < 0:
            raise ConfigurationError("스터디 수는 0 이상이어야 합니다.")
        if self.n_positive + self.n_negative == 0:
            raise ConfigurationError("스터디가 하나 이상 필요합니다.")
        if self.n_lesions < self.n_positive or (self.n_positive == 0 and self.n_lesions):
            raise ConfigurationError(
                f"병변 수({self.n_lesions})는 양성 스터디 수({self.n_positive}) 이상이어야 합니다."
            )
        if not 0 <= self.n_missed <= self.n_lesions:
            raise ConfigurationError(f"n_missed가 범위를 벗어났습니다: {self.n_missed}")
        if self.n_false_positives < 0:
            raise ConfigurationError(f"n_false_positives는 0 이상이어야 합니다: {self.n_false_positives}")
        if not 0 < self.min_diameter_mm <= self.max_diameter_mm:
            raise ConfigurationError(
                f"지름 범위가 잘못되었습니다: [{self.min_diameter_mm}, {self.max_diameter_mm}]"
            )
        if self.diameter_median_mm <= 0 or self.diameter_sigma < 0:
            raise ConfigurationError("지름 분포 인자가 잘못되었습니다.")
        if not 0 <= self.ellipsoid_fraction <= 1:
            raise ConfigurationError(f"ellipsoid_fraction은 [0, 1] 범위여야 합니다: {self.ellipsoid_fraction}")
        if not 0 < self.fp_diameter_mm[0] <= self.fp_diameter_mm[1]:
            raise ConfigurationError(f"FP 지름 범위가 잘못되었습니다: {self.fp_diameter_mm}")
        if self.workers < 1:
            raise ConfigurationError(f"workers는 1 이상이어야 합니다: {self.workers}")
        PhantomSpec(self.dims, self.spacing)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('workers')
        for key in ('dims', 'spacing', 'offset_mm', 'fp_diameter_mm'):
            data[key] = list(data[key])
        return data


@dataclass
class StudyPlan:
    """스터디 하나의 병변 지름과 drop/FP 배정"""
    study_id: str
    index: int
    diameters_mm: List[float] = field(default_factory=list)
    dropped: List[int] = field(default_factory=list)
    n_false_positives: int = 0


def study_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def sample_diameters(params: CohortParams, rng: np.random.Generator) -> List[float]:
    """로그정규 지름, [min, max]로 자름. cover_strata면 앞쪽 병변으로 각 층을 채움"""
    diameters = rng.lognormal(math.log(params.diameter_median_mm), params.diameter_sigma, params.n_lesions)
    diameters = np.clip(diameters, params.min_diameter_mm, params.max_diameter_mm)
    if params.cover_strata:
        forced = [
            d for d in STRATUM_DIAMETERS_MM
            if params.min_diameter_mm <= d <= params.max_diameter_mm
        ]
        for slot, diameter in enumerate(forced[:len(diameters)]):
            diameters[slot] = diameter
    return [round(float(d), 6) for d in diameters]


def plan_cohort(params: CohortParams) -> List[StudyPlan]:
    """병변, 놓친 병변, FP를 스터디에 배정 (전역 seed 하나로 결정)"""
    rng = np.random.default_rng(params.seed)
    n_studies = params.n_positive + params.n_negative
    width = max(4, len(str(n_studies)))
    plans = [StudyPlan(f"study_{i + 1:0{width}d}", i) for i in range(n_studies)]

    diameters = sample_diameters(params, rng)
    owners = list(range(params.n_positive))
    if params.n_lesions > params.n_positive:
        owners += sorted(int(i) for i in rng.integers(0, params.n_positive, params.n_lesions - params.n_positive))
    missed = set(int(i) for i in rng.choice(params.n_lesions, size=params.n_missed, replace=False)) \
        if params.n_missed else set()
    for lesion_index, (owner, diameter) in enumerate(zip(owners, diameters)):
        plan = plans[owner]
        if lesion_index in missed:
            plan.dropped.append(len(plan.diameters_mm))
        plan.diameters_mm.append(diameter)

    if params.n_false_positives:
        for owner in rng.integers(0, n_studies, params.n_false_positives):
            plans[int(owner)].n_false_positives += 1
    return plans


def _perturbation_reach_mm(params: CohortParams) -> float:
    """예측이 GT 병변 밖으로 뻗을 수 있는 최대 거리"""
    spacing = max(params.spacing)
    return math.sqrt(sum(o * o for o in params.offset_mm)) + max(params.steps, 0) * spacing


def _random_center(rng, radius_mm: float, params: CohortParams) -> Tuple[float, float, float]:
    """1복셀 여백 안쪽의 복셀 중심 좌표"""
    center = []
    for size, spacing in zip(params.dims, params.spacing):
        low = math.ceil(radius_mm / spacing) + 1
        high = size - 2 - math.ceil(radius_mm / spacing)
        if high < low:
            raise PhantomGenerationError(
                f"지름 {2 * radius_mm:.2f}mm 병변이 격자 {params.dims}에 들어가지 않습니다."
            )
        center.append(int(rng.integers(low, high + 1)) * spacing)
    return tuple(center)


def _place(rng, radii_mm, placed: List[LesionShape], gap_mm: float, params: CohortParams, shape: str):
    radius = max(radii_mm)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        center = _random_center(rng, radius, params)
        if all(
            math.dist(center, other.center_mm) > radius + other.bounding_radius_mm + gap_mm
            for other in placed
        ):
            return LesionShape(shape, center, radii_mm)
    raise PhantomGenerationError(
        f"{MAX_PLACEMENT_ATTEMPTS}번 시도 안에 병변을 배치하지 못했습니다 (격자 {params.dims})."
    )


def build_spec(plan: StudyPlan, params: CohortParams) -> PhantomSpec:
    """StudyPlan에서 도형 배치까지 정한 PhantomSpec"""
    rng = study_rng(params.seed, plan.index)
    spacing = max(params.spacing)
    touch_gap = math.sqrt(3) * spacing + spacing
    gap = touch_gap + 2 * _perturbation_reach_mm(params)

    lesions: List[LesionShape] = []
    for diameter in plan.diameters_mm:
        radius = diameter / 2
        if rng.random() < params.ellipsoid_fraction:
            radii = (radius, radius * rng.uniform(0.6, 1.0), radius * rng.uniform(0.6, 1.0))
            lesions.append(_place(rng, radii, lesions, gap, params, 'ellipsoid'))
        else:
            lesions.append(_place(rng, (radius,) * 3, lesions, gap, params, 'sphere'))

    false_positives: List[LesionShape] = []
    low, high = params.fp_diameter_mm
    for _ in range(plan.n_false_positives):
        radius = rng.uniform(low, high) / 2
        false_positives.append(
            _place(rng, (radius,) * 3, lesions + false_positives, gap, params, 'sphere')
        )

    return PhantomSpec(
        dims=params.dims,
        spacing=params.spacing,
        lesions=tuple(lesions),
        perturbation=Perturbation(
            steps=params.steps,
            offset_mm=params.offset_mm,
            drop=tuple(plan.dropped),
            false_positives=tuple(false_positives),
        ),
        seed=int(np.random.SeedSequence([params.seed, plan.index]).generate_state(1)[0]),
    )


def _verify_detection(spec: PhantomSpec, pred: np.ndarray, dropped) -> None:
    """놓친 병변은 예측과 겹치지 않고 나머지는 겹치는지 확인"""
    for index, shape in enumerate(spec.lesions):
        overlaps = bool((shape_mask(shape, spec.dims, spec.spacing) & pred).any())
        if overlaps == (index in dropped):
            state = '겹칩니다' if overlaps else '겹치지 않습니다'
            raise PhantomGenerationError(f"{index}번 병변의 예측이 기대와 달리 {state}.")


def generate_study(plan: StudyPlan, params: CohortParams, out_dir: Path) -> Dict[str, Any]:
    spec = build_spec(plan, params)
    gt, truths = rasterize(spec)
    dropped = spec.dropped_indices()
    pred = perturb(gt, spec, dropped)
    _verify_detection(spec, pred.array, dropped)

    gt_path = Path('gt') / f"{plan.study_id}.nii.gz"
    pred_path = Path('pred') / f"{plan.study_id}.nii.gz"
    save_volume(gt.grid, out_dir / gt_path)
    save_volume(pred.grid, out_dir / pred_path)

    n_fp = len(spec.perturbation.false_positives)
    return {
        'gt': gt_path.as_posix(),
        'pred': pred_path.as_posix(),
        'spacing': list(spec.spacing),
        'lesions': [
            shape.to_dict() | {'voxel_count': truth.voxel_count, 'dropped': index in dropped}
            for index, (shape, truth) in enumerate(zip(spec.lesions, truths))
        ],
        'false_positives': [shape.to_dict() for shape in spec.perturbation.false_positives],
        'expected': {
            'tp': len(spec.lesions) - len(dropped),
            'fn': len(dropped),
            'fp': n_fp,
        },
    }


def generate_cohort(out_dir, params: CohortParams) -> Dict[str, Any]:
    """
    팬텀 코호트를 out_dir에 생성

    out_dir/gt/<id>.nii.gz, out_dir/pred/<id>.nii.gz, out_dir/manifest.json.
    스터디들은 병렬로 만들 수 있고 manifest는 study id 순으로 조립한다.
    """
    params.validate()
    out_dir = Path(out_dir)
    (out_dir / 'gt').mkdir(parents=True, exist_ok=True)
    (out_dir / 'pred').mkdir(parents=True, exist_ok=True)

    plans = plan_cohort(params)
    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as executor:
            entries = list(executor.map(lambda plan: generate_study(plan, params, out_dir), plans))
    else:
        entries = [generate_study(plan, params, out_dir) for plan in plans]

    studies = {plan.study_id: entry for plan, entry in zip(plans, entries)}
    totals = {
        'studies': len(studies),
        'positive': sum(1 for entry in entries if entry['lesions']),
        'negative': sum(1 for entry in entries if not entry['lesions']),
        'lesions': sum(len(entry['lesions']) for entry in entries),
        'tp': sum(entry['expected']['tp'] for entry in entries),
        'fn': sum(entry['expected']['fn'] for entry in entries),
        'fp': sum(entry['expected']['fp'] for entry in entries),
    }
    manifest = {
        'schema_version': SCHEMA_VERSION,
        'seed': params.seed,
        'params': params.to_dict(),
        'totals': totals,
        'studies': studies,
    }
    write_json(out_dir / MANIFEST_NAME, manifest)

    logger.info(
        f"팬텀 코호트 생성 완료: {out_dir} (스터디 {totals['studies']}, 병변 {totals['lesions']}, "
        f"기대 TP {totals['tp']} / FN {totals['fn']} / FP {totals['fp']})"
    )
    SystemLog.log('INFO', 'phantom', f"팬텀 코호트 생성: {out_dir}", totals)
    return manifest

"""
lesioneval 유틸리티 함수들
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, List, Optional

from django.conf import settings

from core.exceptions import ConfigurationError

logger = logging.getLogger('lesioneval')

# core.Settings 키 -> Django settings 이름
SETTING_KEYS = {
    'tau_mm': 'LESIONEVAL_TAU_MM',
    'connectivity': 'LESIONEVAL_CONNECTIVITY',
    'strata': 'LESIONEVAL_STRATA',
    'bootstrap_n': 'LESIONEVAL_BOOTSTRAP_N',
    'seed': 'LESIONEVAL_SEED',
    'band_mode': 'LESIONEVAL_BAND_MODE',
    'workers': 'LESIONEVAL_WORKERS',
    'confidence': 'LESIONEVAL_CONFIDENCE',
    'threshold': 'LESIONEVAL_THRESHOLD',
    'max_skip_fraction': 'LESIONEVAL_MAX_SKIP_FRACTION',
    'curve_thresholds': 'LESIONEVAL_CURVE_THRESHOLDS',
    'mw_exact_max_n': 'LESIONEVAL_MW_EXACT_MAX_N',
}


def resolve_setting(key: str, override: Any = None) -> Any:
    """
    평가 설정 값 결정

    우선순위: 명시적 override > core.Settings(DB) > Django settings(환경 변수)
    """
    if override is not None:
        return override
    if key not in SETTING_KEYS:
        raise ConfigurationError(f"알 수 없는 설정 키: {key}")

    from core.models import Settings

    try:
        value = Settings.get_setting(key)
    except Exception as e:
        # 마이그레이션 전이거나 DB가 없을 때
        logger.debug(f"DB 설정 조회 실패, 기본값 사용: {key} ({e})")
        value = None
    if value is not None:
        return value
    return getattr(settings, SETTING_KEYS[key])


def parse_float_list(text, name: str = 'values') -> List[float]:
    """'0,1,2.5' 형식 문자열 또는 숫자 목록을 float 목록으로"""
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = [part for part in str(text).split(',') if part.strip()]
    try:
        values = [float(part) for part in parts]
    except ValueError as e:
        raise ConfigurationError(f"{name}를 해석할 수 없습니다: {text!r}") from e
    if any(not math.isfinite(v) for v in values):
        raise ConfigurationError(f"{name}에 유한하지 않은 값이 있습니다: {text!r}")
    return values


def format_decimal(value: Optional[float], decimals: int = 2) -> str:
    """표시용 반올림 (None은 빈 문자열)"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ''
    return f"{value:.{decimals}f}"


def json_ready(value):
    """JSON 직렬화 가능한 값으로 변환 (NaN/inf는 None)"""
    if isinstance(value, dict):
        return {str(k): json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    if hasattr(value, 'item') and callable(value.item):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, payload) -> Path:
    """키 정렬, 들여쓰기 2칸의 결정적 JSON 저장"""
    path = Path(path)
    text = json.dumps(json_ready(payload), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
    path.write_text(text + '\n', encoding='utf-8')
    return path


def read_json(path):
    with open(path, encoding='utf-8') as fileobj:
        return json.load(fileobj)

"""
lesioneval 예외 계층

각 예외는 CLI 종료 코드(exit_code)를 가진다.
0 성공, 1 사용법/설정 오류, 2 데이터 오류, 3 통계 퇴화(degenerate) 오류
"""


class LesionEvalError(Exception):
    """lesioneval 기본 예외"""
    exit_code = 2


class ConfigurationError(LesionEvalError):
    """설정/사용법 오류"""
    exit_code = 1


class DataError(LesionEvalError):
    """입력 데이터 오류"""
    exit_code = 2


class VolumeFormatError(DataError):
    """NIfTI 헤더 형식 오류 (sizeof_hdr, magic 등)"""


class UnsupportedShapeError(VolumeFormatError):
    """3D가 아닌 볼륨"""


class UnsupportedDatatypeError(VolumeFormatError):
    """지원하지 않는 datatype 코드"""


class TruncatedVolumeError(DataError):
    """데이터 영역이 헤더가 선언한 크기보다 짧음 (IO 오류)"""


class IncompatibleGridsError(DataError):
    """GT와 예측 마스크의 격자(dims/spacing)가 다름"""


class EmptyCohortError(DataError):
    """평가할 스터디가 없음"""


class IncomparableRunsError(DataError):
    """서로 다른 GT 코호트를 평가한 결과를 비교하려 함"""


class PhantomGenerationError(DataError):
    """팬텀 형상이 격자를 벗어나거나 서로 닿음"""


class TooManySkippedStudiesError(DataError):
    """건너뛴 스터디 비율이 허용치를 초과"""


class StatisticsError(LesionEvalError):
    """통계 계산 불가 (퇴화)"""
    exit_code = 3


class DegenerateTableError(StatisticsError):
    """2x2 분할표의 주변합이 0"""


class InsufficientDataError(StatisticsError):
    """표본 수 부족"""


class UndefinedCorrelationError(StatisticsError):
    """순위 분산이 0이라 상관계수를 정의할 수 없음"""


class DegenerateBootstrapError(StatisticsError):
    """부트스트랩 재표본 중 통계량이 정의되지 않은 비율이 허용치 초과"""

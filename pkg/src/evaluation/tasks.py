"""
Celery 태스크들
"""

import logging

from celery import shared_task

from core.exceptions import LesionEvalError
from core.models import SystemLog

logger = logging.getLogger('lesioneval')


@shared_task(bind=True)
def evaluate_run(self, run_id):
    """API로 생성된 평가 실행 처리"""
    from evaluation.models import EvaluationRun
    from evaluation.services import EvaluationService, config_for_run

    try:
        run = EvaluationRun.objects.get(id=run_id)
    except EvaluationRun.DoesNotExist:
        logger.error(f"평가 실행을 찾을 수 없음: {run_id}")
        return None

    if run.status == 'completed':
        logger.info(f"이미 완료된 평가 실행: {run_id}")
        return run.id

    try:
        config = config_for_run(run)
        EvaluationService(config).run(run=run, task_id=self.request.id)
    except LesionEvalError as e:
        # 설정 오류는 run.start() 전에 발생하므로 여기서 실패 처리
        if run.status != 'failed':
            run.fail(f"{type(e).__name__}: {e}")
        logger.error(f"평가 실행 {run_id} 실패: {e}")
        SystemLog.log('ERROR', 'evaluation', f"평가 태스크 실패: run {run_id}",
                      {'error': str(e), 'exit_code': e.exit_code})
        return None
    except Exception as e:
        run.fail(f"{type(e).__name__}: {e}")
        logger.exception(f"평가 실행 {run_id} 예외")
        raise

    return run.id

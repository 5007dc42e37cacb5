"""
Celery 설정
"""

import os
from celery import Celery

# Django 설정 모듈 지정
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'lesioneval.settings')

app = Celery('lesioneval')

# Django 설정에서 Celery 설정 가져오기
app.config_from_object('django.conf:settings', namespace='CELERY')

# Django 앱에서 태스크 자동 발견
app.autodiscover_tasks()

app.conf.timezone = 'Asia/Seoul'

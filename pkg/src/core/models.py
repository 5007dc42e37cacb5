from django.db import models

from core.exceptions import ConfigurationError


class Settings(models.Model):
    """
    평가 기본값 재정의 (DB)

    key는 core.utils.SETTING_KEYS 중 하나. 명령행 인자보다 약하고 환경 변수보다 강하다.
    """
    SETTING_TYPES = [
        ('integer', '정수'),
        ('float', '실수'),
        ('string', '문자열'),
        ('float_list', '실수 목록'),
    ]

    key = models.CharField(
        max_length=100,
        unique=True,
        help_text="설정 키 (tau_mm, strata, bootstrap_n ...)"
    )
    value = models.TextField(
        help_text="설정 값 (목록은 쉼표 구분)"
    )
    value_type = models.CharField(
        max_length=20,
        choices=SETTING_TYPES,
        default='string'
    )
    description = models.TextField(
        blank=True,
        null=True,
        help_text="설정 설명"
    )
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        verbose_name = "평가 설정"
        verbose_name_plural = "평가 설정들"
        ordering = ['key']

    def __str__(self):
        return f"{self.key}: {self.value}"

    def clean(self):
        from core.utils import SETTING_KEYS

        if self.key not in SETTING_KEYS:
            raise ConfigurationError(f"알 수 없는 설정 키: {self.key}")
        self.get_typed_value()

    def get_typed_value(self):
        """value_type에 맞게 변환 (실패하면 ConfigurationError)"""
        from core.utils import parse_float_list

        try:
            if self.value_type == 'integer':
                return int(self.value)
            if self.value_type == 'float':
                return float(self.value)
        except ValueError as e:
            raise ConfigurationError(f"설정 {self.key} 값을 {self.value_type}로 변환할 수 없습니다: {self.value!r}") from e
        if self.value_type == 'float_list':
            return ','.join(str(v) for v in parse_float_list(self.value, self.key))
        return self.value

    @staticmethod
    def infer_type(value) -> str:
        if isinstance(value, bool):
            raise ConfigurationError(f"불린 설정은 지원하지 않습니다: {value}")
        if isinstance(value, int):
            return 'integer'
        if isinstance(value, float):
            return 'float'
        if isinstance(value, (list, tuple)):
            return 'float_list'
        return 'string'

    @classmethod
    def get_setting(cls, key, default=None):
        try:
            return cls.objects.get(key=key).get_typed_value()
        except cls.DoesNotExist:
            return default

    @classmethod
    def set_setting(cls, key, value, value_type=None, description=None):
        """설정 저장 (value_type을 생략하면 값에서 추론)"""
        value_type = value_type or cls.infer_type(value)
        if isinstance(value, (list, tuple)):
            value = ','.join(str(v) for v in value)
        setting = cls.objects.filter(key=key).first() or cls(key=key)
        setting.value = str(value)
        setting.value_type = value_type
        if description:
            setting.description = description
        elif not setting.description:
            setting.description = f"{key} 기본값"
        setting.full_clean(exclude=['description'])
        setting.save()
        return setting


class SystemLog(models.Model):
    """실행 이력 로그 (평가, 통계, 팬텀, 보고서)"""
    LEVEL_CHOICES = [
        ('DEBUG', 'Debug'),
        ('INFO', 'Info'),
        ('WARNING', 'Warning'),
        ('ERROR', 'Error'),
        ('CRITICAL', 'Critical'),
    ]

    CATEGORY_CHOICES = [
        ('system', '시스템'),
        ('evaluation', '평가'),
        ('statistics', '통계'),
        ('phantom', '팬텀'),
        ('report', '보고서'),
    ]

    level = models.CharField(
        max_length=10,
        choices=LEVEL_CHOICES,
        default='INFO'
    )
    category = models.CharField(
        max_length=20,
        choices=CATEGORY_CHOICES,
        default='system'
    )
    message = models.TextField(
        help_text="로그 메시지"
    )
    data = models.JSONField(
        blank=True,
        null=True,
        help_text="추가 데이터 (JSON)"
    )
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        verbose_name = "시스템 로그"
        verbose_name_plural = "시스템 로그들"
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['level']),
            models.Index(fields=['category']),
            models.Index(fields=['-created_at']),
        ]

    def __str__(self):
        return f"[{self.level}] {self.category}: {self.message[:50]}..."

    @classmethod
    def log(cls, level, category, message, data=None):
        """로그 생성 (data는 JSON으로 저장 가능한 값으로 변환)"""
        from core.utils import json_ready

        return cls.objects.create(
            level=level,
            category=category,
            message=message,
            data=json_ready(data) if data is not None else None
        )

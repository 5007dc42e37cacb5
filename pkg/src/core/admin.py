import json

from django.contrib import admin
from django.utils.html import format_html

from .models import Settings, SystemLog
from .utils import SETTING_KEYS, resolve_setting


@admin.register(Settings)
class SettingsAdmin(admin.ModelAdmin):
    list_display = ['key', 'value', 'value_type', 'django_default', 'updated_at']
    list_filter = ['value_type']
    search_fields = ['key', 'description']
    readonly_fields = ['created_at', 'updated_at']
    ordering = ['key']

    def django_default(self, obj):
        from django.conf import settings

        name = SETTING_KEYS.get(obj.key)
        return getattr(settings, name, '-') if name else '-'
    django_default.short_description = '환경 기본값'

    def changelist_view(self, request, extra_context=None):
        extra_context = extra_context or {}
        extra_context['effective_settings'] = {key: resolve_setting(key) for key in SETTING_KEYS}
        return super().changelist_view(request, extra_context=extra_context)


@admin.register(SystemLog)
class SystemLogAdmin(admin.ModelAdmin):
    list_display = ['level_colored', 'category', 'message_short', 'created_at']
    list_filter = ['level', 'category', 'created_at']
    search_fields = ['message']
    readonly_fields = ['level', 'category', 'message', 'data_pretty', 'created_at']
    exclude = ['data']
    date_hierarchy = 'created_at'
    ordering = ['-created_at']

    LEVEL_COLORS = {
        'DEBUG': 'gray',
        'INFO': 'blue',
        'WARNING': 'orange',
        'ERROR': 'red',
        'CRITICAL': 'darkred',
    }

    def level_colored(self, obj):
        return format_html(
            '<span style="color: {}; font-weight: bold;">{}</span>',
            self.LEVEL_COLORS.get(obj.level, 'black'), obj.level
        )
    level_colored.short_description = '레벨'

    def message_short(self, obj):
        return obj.message[:100] + '...' if len(obj.message) > 100 else obj.message
    message_short.short_description = '메시지'

    def data_pretty(self, obj):
        if obj.data is None:
            return '-'
        return format_html('<pre>{}</pre>', json.dumps(obj.data, indent=2, ensure_ascii=False))
    data_pretty.short_description = '데이터'

    def has_add_permission(self, request):
        return False

    def has_change_permission(self, request, obj=None):
        return False

from django.contrib import admin
from django.utils.html import format_html

from .models import EvaluationRun, LesionRecord, StudyResult


class StudyResultInline(admin.TabularInline):
    model = StudyResult
    extra = 0
    can_delete = False
    fields = ['study_id', 'status', 'n_gt', 'n_pred', 'n_tp', 'n_fn', 'n_fp', 'error_message']
    readonly_fields = fields
    show_change_link = False

    def has_add_permission(self, request, obj=None):
        return False


@admin.register(EvaluationRun)
class EvaluationRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'name', 'status_colored', 'source', 'n_studies', 'n_skipped',
                    'sensitivity_display', 'n_fp', 'created_at']
    list_filter = ['status', 'source', 'created_at']
    search_fields = ['name', 'gt_dir', 'pred_dir']
    readonly_fields = ['report', 'task_id', 'started_at', 'completed_at', 'created_at', 'updated_at']
    date_hierarchy = 'created_at'
    ordering = ['-created_at']
    inlines = [StudyResultInline]

    def status_colored(self, obj):
        colors = {
            'pending': 'gray',
            'running': 'blue',
            'completed': 'green',
            'failed': 'red',
        }
        return format_html(
            '<span style="color: {}; font-weight: bold;">{}</span>',
            colors.get(obj.status, 'black'), obj.get_status_display()
        )
    status_colored.short_description = '상태'

    def sensitivity_display(self, obj):
        value = obj.sensitivity
        return '-' if value is None else f"{value:.2f}"
    sensitivity_display.short_description = '민감도'


@admin.register(LesionRecord)
class LesionRecordAdmin(admin.ModelAdmin):
    list_display = ['run', 'study_id', 'lesion_id', 'status', 'gt_diameter_mm', 'dice', 'nsd']
    list_filter = ['status', 'run']
    search_fields = ['study_id']
    ordering = ['run', 'study_id', 'lesion_id']

    def has_add_permission(self, request):
        return False

    def has_change_permission(self, request, obj=None):
        return False

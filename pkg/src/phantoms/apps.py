from django.apps import AppConfig


class PhantomsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "phantoms"

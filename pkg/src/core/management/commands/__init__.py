# Django management commands
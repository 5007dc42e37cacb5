# Django management module
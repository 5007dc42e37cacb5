"""
lesioneval URL 설정
"""
from django.contrib import admin
from django.urls import path, include
from django.views.generic import RedirectView

urlpatterns = [
    # 루트 경로를 평가 실행 목록으로 리다이렉트
    path('', RedirectView.as_view(url='/api/v1/runs/', permanent=False)),

    # API v1
    path('api/v1/', include('api.urls')),

    path('admin/', admin.site.urls),
]

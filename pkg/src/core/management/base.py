"""
lesioneval 관리 명령어 공통 처리

LesionEvalError를 종료 코드가 붙은 CommandError로 바꾸고,
argparse 사용법 오류도 설정 오류와 같은 종료 코드 1로 끝낸다.
"""

import argparse
import logging
import sys
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigurationError, LesionEvalError
from core.models import SystemLog
from core.utils import format_decimal, parse_float_list

logger = logging.getLogger('lesioneval')


def _usage_error(parser, message):
    if parser.called_from_command_line:
        parser.print_usage(sys.stderr)
        parser.exit(ConfigurationError.exit_code, f"{parser.prog}: error: {message}\n")
    raise CommandError(f"Error: {message}", returncode=ConfigurationError.exit_code)


def float_triple(text):
    """argparse type: "x,y,z" -> (x, y, z)"""
    try:
        values = parse_float_list(text, 'triple')
    except ConfigurationError as e:
        raise argparse.ArgumentTypeError(str(e)) from e
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"값 3개가 필요합니다: {text!r}")
    return tuple(values)


class LesionEvalCommand(BaseCommand):
    """handle 대신 run을 구현한다"""

    log_category = 'system'

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = lambda message: _usage_error(parser, message)
        return parser

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except LesionEvalError as e:
            logger.error(f"{type(e).__name__}: {e}")
            SystemLog.log('ERROR', self.log_category, f"명령 실패: {e}", {'error': type(e).__name__})
            raise CommandError(f"{type(e).__name__}: {e}", returncode=e.exit_code) from e

    def run(self, *args, **options):
        raise NotImplementedError

    def write_paths(self, paths):
        for name, path in sorted(paths.items()):
            self.stdout.write(f"  {name}: {Path(path)}")

    @staticmethod
    def display(value, decimals=2):
        return format_decimal(value, decimals) or '-'

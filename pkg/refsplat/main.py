import logging

import click

from refsplat.logger import set_log_level, setup_logging
from refsplat.config.settings import APP_NAME, APP_VERSION, APP_DESCRIPTION
from refsplat.cli.commands import decompose_cmd, eval_cmd, relight_cmd, synth_cmd, train_cmd


@click.group(help=APP_DESCRIPTION)
@click.version_option(APP_VERSION, prog_name=APP_NAME)
@click.option("--log-level", type=str, default=None, help="日志级别: DEBUG, INFO, WARNING, ERROR, CRITICAL")
def cli(log_level):
    # 确保日志配置在命令执行前被正确设置
    setup_logging()
    if log_level:
        try:
            set_log_level(log_level)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--log-level")
    logging.debug(f"{APP_NAME} v{APP_VERSION} 启动")


# 注册所有命令
cli.add_command(train_cmd)
cli.add_command(eval_cmd)
cli.add_command(decompose_cmd)
cli.add_command(relight_cmd)
cli.add_command(synth_cmd)


def main():
    """命令行入口"""
    cli()


if __name__ == "__main__":
    main()

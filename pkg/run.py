import logging
import os

from app import create_app
from app.common import CONFIG_ENV, get_engine
from kgengine.common import LOG_FORMAT

logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)

app = create_app()

# Load graph, checkpoints and typing table before serving the first request
if os.environ.get(CONFIG_ENV):
    get_engine()

if __name__ == '__main__':
    app.run()

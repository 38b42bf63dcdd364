import connexion
from flask import jsonify
from flask_cors import CORS
import logging
import os

from kgengine.common import KGEngineError

logger = logging.getLogger(__name__)


def engine_unavailable(error):
    # Config, graph or checkpoint problems while loading the engine
    logger.error("Engine unavailable: %s", error)
    return jsonify(title="Engine unavailable", detail=str(error), status=503), 503


def create_app():
    # App and API
    options = {
        'swagger_url': '/',
        'openapi_spec_path': '/openapi.json'
    }

    connex_app = connexion.App(__name__, specification_dir=os.path.dirname(__file__), options=options)
    connex_app.add_api('api_spec.yml')
    connex_app.add_error_handler(KGEngineError, engine_unavailable)

    app = connex_app.app

    # Allow CORS for all domains on the query endpoints
    CORS(app, resources={
        r"/stats": {"origins": "*"},
        r"/typing": {"origins": "*"},
        r"/infer": {"origins": "*"}
    })

    # Keep the key order of the engine's documents
    app.config['JSON_SORT_KEYS'] = False

    return app


if __name__ == '__main__':
    create_app().run()

"""
Cure Rate Service - HTTP entry point
Serves the cure-rate pipeline (estimate, analyze, simulate) over a JSON API
"""

import logging
import os

import uvicorn
from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from services.routes import router

# Load environment variables
load_dotenv()

logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)

VERSION = "1.0.0"


def create_app() -> FastAPI:
    """Create the cure-rate application"""
    app = FastAPI(
        title="Cure Rate Service",
        description="Absorbing Markov chain cure-rate estimation with Weibull survival smoothing",
        version=VERSION,
        docs_url="/docs",
        redoc_url="/redoc"
    )

    # Add CORS middleware
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/")
    async def root():
        return {
            "message": "Cure Rate Service",
            "docs": "/docs",
            "health": "/health",
            "status": "running",
        }

    # Health check endpoint
    @app.get("/health")
    async def health_check():
        return {
            "status": "healthy",
            "system": "curerate",
            "message": "Service is running",
            "version": VERSION,
        }

    app.include_router(router)
    return app


# Create the application
app = create_app()

if __name__ == "__main__":
    # Get configuration from environment
    host = os.getenv("HOST", "0.0.0.0")
    port = int(os.getenv("PORT", 8000))
    reload = os.getenv("RELOAD", "false").lower() == "true"

    logger.info("🌐 Server starting on %s:%d", host, port)
    logger.info("📚 API Documentation: http://%s:%d/docs", host, port)
    logger.info("❤️ Health Check: http://%s:%d/health", host, port)

    try:
        uvicorn.run(
            "curerate_main:app",
            host=host,
            port=port,
            reload=reload,
            log_level=os.getenv("LOG_LEVEL", "info").lower()
        )
    except Exception as e:
        logger.error("❌ Failed to start server: %s", e)
        exit(1)

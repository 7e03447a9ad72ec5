const fs = require('fs');
const path = require('path');

const ASSET_DIR = path.join(__dirname, 'assets');

function readAsset(name) {
  return fs.readFileSync(path.join(ASSET_DIR, name), 'utf8');
}

function listAssets() {
  return fs.readdirSync(ASSET_DIR);
}

module.exports = { readAsset, listAssets };
